//! A small convolutional classifier with analytic gradients.
//!
//! Layer kinds: 3×3 valid convolution, ReLU, 2×2 max-pooling, flatten,
//! dense, and a final two-class softmax. All operations are pure functions
//! of their inputs.

mod arch;
mod batch;
mod network;
mod params;
mod tensor;

pub use arch::{Architecture, LayerSpec, Shape, KERNEL, NUM_CLASSES, POOL};
pub use batch::{Batch, Dataset, Label, Sample, DEMENTED, NON_DEMENTED};
pub use network::{
    backward, evaluate, forward, loss_ce, predict, sgd_step, Evaluation, ForwardCache, LOG_CLAMP,
};
pub use params::{init_model, ModelParameters};
pub use tensor::Tensor;
