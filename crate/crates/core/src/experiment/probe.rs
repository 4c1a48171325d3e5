use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qkd::{run_bb84, QkdPolicy, QuantumChannelConfig};
use crate::rng::derive_seed;

/// Grid of standalone BB84 runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub gammas: Vec<f64>,
    pub lengths_km: Vec<f64>,
    pub eve_rates: Vec<f64>,
    pub n_qubits: usize,
    pub trials: usize,
    pub seed: u64,
    pub policy: QkdPolicy,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            gammas: vec![0.02, 0.1],
            lengths_km: vec![0.0, 10.0, 50.0],
            eve_rates: vec![0.0, 0.5, 1.0],
            n_qubits: 10_000,
            trials: 5,
            seed: 42,
            policy: QkdPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub gamma: f64,
    pub length_km: f64,
    pub eve_rate: f64,
    /// 1 − e^(−γL)
    pub success_probability: f64,
    pub transmittance: f64,
    pub mean_received_fraction: f64,
    /// Sifted bits per received qubit.
    pub mean_sifted_fraction: f64,
    /// Mean over trials that disclosed at least one bit (None if none did).
    pub mean_qber: Option<f64>,
    pub abort_rate: f64,
}

/// Runs `trials` sessions per grid point. Trials use independent seeds
/// keyed by grid position.
pub fn run_probe(cfg: &ProbeConfig) -> Result<Vec<ProbeRow>> {
    if cfg.trials == 0 {
        return Err(Error::config("trials must be >= 1"));
    }
    if cfg.gammas.is_empty() || cfg.lengths_km.is_empty() || cfg.eve_rates.is_empty() {
        return Err(Error::config("probe grid axes must be non-empty"));
    }
    cfg.policy.validate()?;
    let mut rows = Vec::new();
    for (gi, &gamma) in cfg.gammas.iter().enumerate() {
        for (li, &length_km) in cfg.lengths_km.iter().enumerate() {
            for (ei, &eve_rate) in cfg.eve_rates.iter().enumerate() {
                let ch = QuantumChannelConfig {
                    gamma,
                    length_km,
                    eve_rate,
                    noise_flip_prob: 0.0,
                };
                ch.validate()?;
                let (mut recv, mut sift, mut aborts) = (0.0, 0.0, 0usize);
                let (mut qber_sum, mut qber_n) = (0.0, 0usize);
                for trial in 0..cfg.trials {
                    let seed = derive_seed(cfg.seed, &[gi as u64, li as u64, ei as u64]);
                    let r = run_bb84(cfg.n_qubits, &ch, &cfg.policy, seed, trial as u64)?;
                    recv += r.received_count as f64 / cfg.n_qubits as f64;
                    if r.received_count > 0 {
                        sift += r.sifted_bits.len() as f64 / r.received_count as f64;
                    }
                    if r.sample_bits_disclosed > 0 {
                        qber_sum += r.qber_estimate;
                        qber_n += 1;
                    }
                    aborts += r.aborted as usize;
                }
                let n = cfg.trials as f64;
                rows.push(ProbeRow {
                    gamma,
                    length_km,
                    eve_rate,
                    success_probability: ch.success_probability(),
                    transmittance: ch.transmittance(),
                    mean_received_fraction: recv / n,
                    mean_sifted_fraction: sift / n,
                    mean_qber: (qber_n > 0).then(|| qber_sum / qber_n as f64),
                    abort_rate: aborts as f64 / n,
                });
            }
        }
    }
    Ok(rows)
}
