use serde::{Deserialize, Serialize};

use super::aggregate::{AggregationRule, Normalization};
use crate::qkd::QkdTranscript;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Completed,
    Failed,
}

/// What happened to one client in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundRecord {
    pub client_id: usize,
    /// N_i
    pub samples: usize,
    /// Mean training loss over the last local epoch.
    pub local_loss: Option<f64>,
    pub qber: Option<f64>,
    pub key_bits_used: usize,
    pub qkd_sessions: Vec<QkdTranscript>,
    pub aborted: bool,
    pub abort_reason: Option<String>,
    pub tampered_in_transit: bool,
    pub received_global: bool,
    pub download_error: Option<String>,
}

/// Metrics for one completed (or failed) round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub status: RoundStatus,
    pub failure: Option<String>,
    pub security_alert: bool,
    pub included_clients: usize,
    pub clients: Vec<ClientRoundRecord>,
    /// Test accuracy of the global model after this round.
    pub accuracy: f64,
    pub loss: f64,
    pub aggregation: AggregationRule,
    pub normalization: Normalization,
    /// Wall-clock duration. Not serialized, so metrics files stay
    /// reproducible; timings are written separately.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

impl RoundRecord {
    /// Copy with key, QBER, session and timing fields blanked, for
    /// comparing plaintext and encrypted runs.
    pub fn without_security_fields(&self) -> RoundRecord {
        let mut r = self.clone();
        r.wall_time_ms = 0.0;
        for c in r.clients.iter_mut() {
            c.qber = None;
            c.key_bits_used = 0;
            c.qkd_sessions.clear();
        }
        r
    }

    pub fn is_failed(&self) -> bool {
        self.status == RoundStatus::Failed
    }
}
