//! Deterministic simulation of federated learning in which model weights
//! travel only under keys established by a simulated BB84 exchange.
//!
//! The pipeline per round: BB84 key establishment per client link, local
//! CNN training, encrypted upload, server-side decryption and weighted
//! aggregation, re-encrypted broadcast, evaluation on a held-out set.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); the federation
//! pipeline and both wire formats use `f64`. Concrete aliases live at the
//! crate root.

pub mod crypto;
pub mod data;
pub mod digest;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod model;
pub mod qkd;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = model::Tensor<f64>;
pub type Tensor32 = model::Tensor<f32>;
pub type Params64 = model::ModelParameters<f64>;
pub type Params32 = model::ModelParameters<f32>;
pub type Dataset64 = model::Dataset<f64>;
pub type Dataset32 = model::Dataset<f32>;
pub type Batch64 = model::Batch<f64>;
pub type Batch32 = model::Batch<f32>;
