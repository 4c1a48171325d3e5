use rand::seq::index;
use rand::Rng;

use super::{AbortReason, QkdPolicy, QkdSessionResult, QuantumChannelConfig};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Test hooks for [`run_bb84_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Bb84Hooks {
    /// Receiver always measures in the sender's basis.
    pub force_matching_bases: bool,
}

/// Runs one BB84 session. The random stream depends only on
/// `(seed, session_id)`.
pub fn run_bb84(
    n_qubits: usize,
    channel: &QuantumChannelConfig,
    policy: &QkdPolicy,
    seed: u64,
    session_id: u64,
) -> Result<QkdSessionResult> {
    run_bb84_with(n_qubits, channel, policy, seed, session_id, Bb84Hooks::default())
}

pub fn run_bb84_with(
    n_qubits: usize,
    channel: &QuantumChannelConfig,
    policy: &QkdPolicy,
    seed: u64,
    session_id: u64,
    hooks: Bb84Hooks,
) -> Result<QkdSessionResult> {
    channel.validate()?;
    policy.validate()?;
    // Best case: every qubit survives and sifts.
    let best_case = n_qubits.saturating_sub(policy.disclosed_count(n_qubits));
    if n_qubits == 0 || best_case < policy.min_key_bits {
        return Err(Error::config(format!(
            "{n_qubits} qubits cannot yield min_key_bits = {} after disclosing a {} sample",
            policy.min_key_bits, policy.sample_fraction
        )));
    }

    let mut rng = stream_rng(seed, Stream::Qkd, &[session_id]);
    let survive = channel.transmittance();
    let mut received_count = 0;
    let mut sifted_bits = Vec::with_capacity(n_qubits / 2);
    let mut receiver_sifted_bits = Vec::with_capacity(n_qubits / 2);

    for _ in 0..n_qubits {
        let bit: bool = rng.random();
        let basis: bool = rng.random();
        if rng.random::<f64>() >= survive {
            continue;
        }
        received_count += 1;

        // State in flight: (bit, basis).
        let (mut q_bit, mut q_basis) = (bit, basis);
        if channel.eve_rate > 0.0 && rng.random::<f64>() < channel.eve_rate {
            let eve_basis: bool = rng.random();
            let eve_bit = if eve_basis == q_basis { q_bit } else { rng.random() };
            q_bit = eve_bit;
            q_basis = eve_basis;
        }

        let bob_basis: bool = if hooks.force_matching_bases { basis } else { rng.random() };
        let mut bob_bit = if bob_basis == q_basis { q_bit } else { rng.random() };
        if channel.noise_flip_prob > 0.0 && rng.random::<f64>() < channel.noise_flip_prob {
            bob_bit = !bob_bit;
        }

        if bob_basis == basis {
            sifted_bits.push(bit);
            receiver_sifted_bits.push(bob_bit);
        }
    }

    let sifted = sifted_bits.len();
    let disclosed = policy.disclosed_count(sifted);
    let mut disclosed_positions = index::sample(&mut rng, sifted, disclosed).into_vec();
    disclosed_positions.sort_unstable();

    let sample_errors = disclosed_positions
        .iter()
        .filter(|&&i| sifted_bits[i] != receiver_sifted_bits[i])
        .count();
    let qber_estimate = if disclosed == 0 {
        0.0
    } else {
        sample_errors as f64 / disclosed as f64
    };

    let mut is_disclosed = vec![false; sifted];
    for &i in &disclosed_positions {
        is_disclosed[i] = true;
    }
    let (mut key, mut receiver_key): (Vec<bool>, Vec<bool>) = (0..sifted)
        .filter(|&i| !is_disclosed[i])
        .map(|i| (sifted_bits[i], receiver_sifted_bits[i]))
        .unzip();

    let abort_reason = if disclosed > 0 && qber_estimate > policy.qber_abort_threshold {
        Some(AbortReason::QberAboveThreshold)
    } else if key.len() < policy.min_key_bits {
        Some(AbortReason::InsufficientKeyBits)
    } else {
        None
    };
    if abort_reason.is_some() {
        key.clear();
        receiver_key.clear();
    }

    Ok(QkdSessionResult {
        session_id,
        transmitted_count: n_qubits,
        received_count,
        sifted_bits,
        receiver_sifted_bits,
        sample_bits_disclosed: disclosed,
        disclosed_positions,
        sample_errors,
        qber_estimate,
        aborted: abort_reason.is_some(),
        abort_reason,
        key,
        receiver_key,
        transmittance: survive,
        success_probability: channel.success_probability(),
        channel: *channel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qkd::{derive_key, sifted_fraction};

    fn clean() -> QuantumChannelConfig {
        QuantumChannelConfig::lossless()
    }

    #[test]
    fn clean_channel_has_zero_qber() {
        let r = run_bb84(4096, &clean(), &QkdPolicy::default(), 1, 0).unwrap();
        assert_eq!(r.qber_estimate, 0.0);
        assert!(!r.aborted);
        assert_eq!(r.key, r.receiver_key);
        assert_eq!(r.key.len(), r.sifted_bits.len() - r.sample_bits_disclosed);
    }

    #[test]
    fn full_interception_aborts() {
        let r = run_bb84(100_000, &clean().with_eve(1.0), &QkdPolicy::default(), 2, 0).unwrap();
        assert!((0.20..=0.30).contains(&r.qber_estimate), "{}", r.qber_estimate);
        assert!(r.aborted);
        assert_eq!(r.abort_reason, Some(AbortReason::QberAboveThreshold));
        assert!(r.key.is_empty());
    }

    #[test]
    fn too_few_qubits_is_config_error() {
        let policy = QkdPolicy { min_key_bits: 100, ..Default::default() };
        assert!(matches!(run_bb84(120, &clean(), &policy, 0, 0), Err(Error::Config(_))));
        assert!(run_bb84(0, &clean(), &policy, 0, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed_and_session() {
        let p = QkdPolicy::default();
        let ch = QuantumChannelConfig::default().with_eve(0.3);
        let a = run_bb84(3000, &ch, &p, 5, 9).unwrap();
        assert_eq!(a, run_bb84(3000, &ch, &p, 5, 9).unwrap());
        assert_ne!(a.sifted_bits, run_bb84(3000, &ch, &p, 5, 10).unwrap().sifted_bits);
    }

    #[test]
    fn forced_bases_sift_everything() {
        let hooks = Bb84Hooks { force_matching_bases: true };
        let r = run_bb84_with(2000, &clean(), &QkdPolicy::default(), 3, 0, hooks).unwrap();
        assert_eq!(sifted_fraction(&r).unwrap(), 1.0);
    }

    #[test]
    fn disclosed_positions_never_in_key() {
        let r = run_bb84(5000, &clean(), &QkdPolicy::default(), 8, 1).unwrap();
        let kept: Vec<bool> = (0..r.sifted_bits.len())
            .filter(|i| r.disclosed_positions.binary_search(i).is_err())
            .map(|i| r.sifted_bits[i])
            .collect();
        assert_eq!(kept, r.key);
        assert_eq!(r.disclosed_positions.len(), r.sample_bits_disclosed);
    }

    #[test]
    fn total_loss_gives_no_received_qubits() {
        let ch = QuantumChannelConfig { gamma: 10.0, length_km: 100.0, ..clean() };
        let r = run_bb84(1000, &ch, &QkdPolicy::default(), 0, 0).unwrap();
        assert_eq!(r.received_count, 0);
        assert!(r.aborted);
        assert_eq!(r.abort_reason, Some(AbortReason::InsufficientKeyBits));
        assert!(sifted_fraction(&r).is_err());
    }

    #[test]
    fn derive_key_contract() {
        let r = run_bb84(2048, &clean(), &QkdPolicy::default(), 4, 0).unwrap();
        let n = r.key.len();
        assert_eq!(derive_key(&r, n).unwrap(), r.key);
        assert_eq!(derive_key(&r, 10).unwrap(), r.key[..10].to_vec());
        assert!(matches!(derive_key(&r, 0), Err(Error::Config(_))));
        assert!(matches!(
            derive_key(&r, n + 1),
            Err(Error::KeyExhaustion { required, available }) if required == n + 1 && available == n
        ));
        let bad = run_bb84(20_000, &clean().with_eve(1.0), &QkdPolicy::default(), 4, 0).unwrap();
        assert!(matches!(derive_key(&bad, 1), Err(Error::SessionAborted { .. })));
    }

    #[test]
    fn noise_below_threshold_keeps_session_but_keys_disagree() {
        let ch = QuantumChannelConfig { noise_flip_prob: 0.03, ..clean() };
        let r = run_bb84(40_000, &ch, &QkdPolicy::default(), 6, 0).unwrap();
        assert!(!r.aborted);
        assert!(r.key_mismatches() > 0);
    }
}
