//! Round-based federated training with QKD-keyed weight transport.
//!
//! Each round: one BB84 session per client link, local SGD at every keyed
//! client, encrypted upload, decryption and aggregation at the server,
//! re-encrypted broadcast, evaluation of the global model on a held-out
//! set. Per-client work is independent and may run on the rayon pool;
//! every random stream is keyed by (master seed, round, client), so the
//! schedule never affects results.

mod aggregate;
mod client;
mod keys;
mod record;
mod run;
mod server;

use serde::{Deserialize, Serialize};

pub use aggregate::{
    aggregate, coefficients, server_aggregate, server_incremental_update, AggregationMode, AggregationRule,
    ClientUpdate, Normalization,
};
pub use client::{
    client_local_train, client_package_update, local_shuffle_order, Client, LocalTraining, LocalUpdate, PrivateShard,
};
pub use keys::{establish_link_keys, establish_links, KeyPair, LinkKeyring, LinkOutcome, LinkSetup};
pub use record::{ClientRoundRecord, RoundRecord, RoundStatus};
pub use run::{
    broadcast_global, run_training, BroadcastFrame, EarlyStop, Federation, FederationConfig, QkdSettings, StopReason,
    TrainingOutcome,
};
pub use server::Server;

/// How weights cross the client-server link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    /// Canonical weight bytes, unencrypted.
    Plaintext,
    #[default]
    Encrypted,
}
