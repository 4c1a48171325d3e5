//! BB84 key distribution over an attenuating channel with an optional
//! intercept-resend eavesdropper.
//!
//! This is a classical Monte-Carlo model of the protocol: qubits are
//! (bit, basis) pairs, a measurement in the preparation basis returns the
//! prepared bit, and a measurement in the conjugate basis returns a fair
//! coin. No error correction or privacy amplification is performed; the
//! sifted bits that survive disclosure are the key.

mod bb84;

pub use bb84::{run_bb84, run_bb84_with, Bb84Hooks};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability metric `1 - exp(-gamma * length_km)`, reported per session.
///
/// Note this grows with distance; photon survival in the simulation uses
/// the transmittance `exp(-gamma * length_km)` instead (see [`transmittance`]).
pub fn qkd_success_probability(gamma: f64, length_km: f64) -> f64 {
    1.0 - (-gamma * length_km).exp()
}

/// Per-qubit survival probability over the channel.
pub fn transmittance(gamma: f64, length_km: f64) -> f64 {
    (-gamma * length_km).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantumChannelConfig {
    /// Attenuation coefficient per km.
    pub gamma: f64,
    pub length_km: f64,
    /// Fraction of transmitted qubits intercepted and resent.
    pub eve_rate: f64,
    /// Intrinsic bit-flip probability at the receiver.
    pub noise_flip_prob: f64,
}

impl Default for QuantumChannelConfig {
    fn default() -> Self {
        Self {
            gamma: 0.02,
            length_km: 10.0,
            eve_rate: 0.0,
            noise_flip_prob: 0.0,
        }
    }
}

impl QuantumChannelConfig {
    pub fn lossless() -> Self {
        Self {
            gamma: 0.0,
            length_km: 0.0,
            eve_rate: 0.0,
            noise_flip_prob: 0.0,
        }
    }

    pub fn with_eve(self, eve_rate: f64) -> Self {
        Self { eve_rate, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if !(self.length_km >= 0.0 && self.length_km.is_finite()) {
            return Err(Error::config(format!(
                "length_km must be finite and >= 0, got {}",
                self.length_km
            )));
        }
        if !(0.0..=1.0).contains(&self.eve_rate) {
            return Err(Error::config(format!("eve_rate must be in [0, 1], got {}", self.eve_rate)));
        }
        if !(0.0..1.0).contains(&self.noise_flip_prob) {
            return Err(Error::config(format!(
                "noise_flip_prob must be in [0, 1), got {}",
                self.noise_flip_prob
            )));
        }
        Ok(())
    }

    pub fn transmittance(&self) -> f64 {
        transmittance(self.gamma, self.length_km)
    }

    pub fn success_probability(&self) -> f64 {
        qkd_success_probability(self.gamma, self.length_km)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QkdPolicy {
    pub qber_abort_threshold: f64,
    pub sample_fraction: f64,
    pub min_key_bits: usize,
}

impl Default for QkdPolicy {
    fn default() -> Self {
        Self {
            qber_abort_threshold: 0.11,
            sample_fraction: 0.25,
            min_key_bits: 256,
        }
    }
}

impl QkdPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.qber_abort_threshold > 0.0 && self.qber_abort_threshold < 0.5) {
            return Err(Error::config(format!(
                "qber_abort_threshold must be in (0, 0.5), got {}",
                self.qber_abort_threshold
            )));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction < 1.0) {
            return Err(Error::config(format!(
                "sample_fraction must be in (0, 1), got {}",
                self.sample_fraction
            )));
        }
        if self.min_key_bits == 0 {
            return Err(Error::config("min_key_bits must be >= 1"));
        }
        Ok(())
    }

    /// Sifted bits disclosed for error estimation.
    pub fn disclosed_count(&self, sifted: usize) -> usize {
        ((sifted as f64) * self.sample_fraction).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    QberAboveThreshold,
    InsufficientKeyBits,
}

/// Full transcript of one BB84 run.
#[derive(Debug, Clone, PartialEq)]
pub struct QkdSessionResult {
    pub session_id: u64,
    pub transmitted_count: usize,
    /// Qubits that survived the channel.
    pub received_count: usize,
    /// Sender's bits at basis-matched positions.
    pub sifted_bits: Vec<bool>,
    /// Receiver's measured bits at the same positions.
    pub receiver_sifted_bits: Vec<bool>,
    /// Sorted positions in the sifted sequence disclosed for QBER estimation.
    pub disclosed_positions: Vec<usize>,
    pub sample_bits_disclosed: usize,
    pub sample_errors: usize,
    pub qber_estimate: f64,
    pub aborted: bool,
    pub abort_reason: Option<AbortReason>,
    /// Sender-side key: undisclosed sifted bits in order. Empty iff aborted.
    pub key: Vec<bool>,
    /// Receiver-side key; differs from `key` wherever channel errors hit.
    pub receiver_key: Vec<bool>,
    pub transmittance: f64,
    pub success_probability: f64,
    pub channel: QuantumChannelConfig,
}

/// Serializable summary of a session for metrics logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QkdTranscript {
    pub session_id: u64,
    pub transmitted: usize,
    pub received: usize,
    pub sifted: usize,
    pub disclosed: usize,
    pub sample_errors: usize,
    pub qber: f64,
    pub aborted: bool,
    pub abort_reason: Option<AbortReason>,
    pub key_bits: usize,
    pub gamma: f64,
    pub length_km: f64,
    pub eve_rate: f64,
    pub transmittance: f64,
    pub success_probability: f64,
}

impl QkdSessionResult {
    pub fn transcript(&self) -> QkdTranscript {
        QkdTranscript {
            session_id: self.session_id,
            transmitted: self.transmitted_count,
            received: self.received_count,
            sifted: self.sifted_bits.len(),
            disclosed: self.sample_bits_disclosed,
            sample_errors: self.sample_errors,
            qber: self.qber_estimate,
            aborted: self.aborted,
            abort_reason: self.abort_reason,
            key_bits: self.key.len(),
            gamma: self.channel.gamma,
            length_km: self.channel.length_km,
            eve_rate: self.channel.eve_rate,
            transmittance: self.transmittance,
            success_probability: self.success_probability,
        }
    }

    /// Number of key positions where sender and receiver disagree.
    pub fn key_mismatches(&self) -> usize {
        self.key.iter().zip(&self.receiver_key).filter(|(a, b)| a != b).count()
    }
}

/// Sifted bits per received qubit.
pub fn sifted_fraction(result: &QkdSessionResult) -> Result<f64> {
    if result.received_count == 0 {
        return Err(Error::config(format!(
            "session {} received no qubits; sifted fraction undefined",
            result.session_id
        )));
    }
    Ok(result.sifted_bits.len() as f64 / result.received_count as f64)
}

/// First `required_bits` of the session's (sender-side) key.
pub fn derive_key(result: &QkdSessionResult, required_bits: usize) -> Result<Vec<bool>> {
    if required_bits == 0 {
        return Err(Error::config("required_bits must be >= 1"));
    }
    if result.aborted {
        return Err(Error::SessionAborted {
            session_id: result.session_id,
        });
    }
    if required_bits > result.key.len() {
        return Err(Error::KeyExhaustion {
            required: required_bits,
            available: result.key.len(),
        });
    }
    Ok(result.key[..required_bits].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn success_probability_values() {
        assert_eq!(qkd_success_probability(0.2, 0.0), 0.0);
        assert!((qkd_success_probability(0.1, 10.0) - 0.6321205588285577).abs() < 1e-12);
        assert!((qkd_success_probability(1.0, 50.0) - 1.0).abs() < 1e-12);
        assert!((transmittance(0.1, 10.0) + qkd_success_probability(0.1, 10.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(QuantumChannelConfig::default().validate().is_ok());
        assert!(QuantumChannelConfig { eve_rate: 1.5, ..Default::default() }.validate().is_err());
        assert!(QuantumChannelConfig { gamma: -1.0, ..Default::default() }.validate().is_err());
        assert!(QuantumChannelConfig { noise_flip_prob: 1.0, ..Default::default() }.validate().is_err());
        assert!(QkdPolicy::default().validate().is_ok());
        assert!(QkdPolicy { qber_abort_threshold: 0.5, ..Default::default() }.validate().is_err());
        assert!(QkdPolicy { sample_fraction: 0.0, ..Default::default() }.validate().is_err());
        assert!(QkdPolicy { min_key_bits: 0, ..Default::default() }.validate().is_err());
    }
}
