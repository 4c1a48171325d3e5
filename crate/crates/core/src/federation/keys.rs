//! Per-link key material established by BB84 sessions.

use rayon::prelude::*;

use crate::crypto::QkdKey;
use crate::error::{Error, Result};
use crate::qkd::{run_bb84, AbortReason, QkdPolicy, QkdSessionResult, QkdTranscript, QuantumChannelConfig};
use crate::rng::{derive_seed, Stream};

/// Upper bound on top-up sessions in a single retry.
const MAX_TOPUP_SESSIONS: usize = 4096;

/// Key bits for one transfer, as held by each end of the link.
#[derive(Debug, Clone)]
pub struct KeyPair {
    pub client: QkdKey,
    pub server: QkdKey,
    /// Position of the first bit in the link's key material.
    pub offset: usize,
}

/// Key material shared by one client and the server for one round.
///
/// Both ends' copies are kept: they can differ where eavesdropping or
/// channel noise flipped bits that the QBER sample did not catch.
/// Transfers consume disjoint, increasing bit ranges.
#[derive(Debug, Clone)]
pub struct LinkKeyring {
    client_id: usize,
    round: usize,
    master_seed: u64,
    n_qubits: usize,
    channel: QuantumChannelConfig,
    policy: QkdPolicy,
    client_bits: Vec<bool>,
    server_bits: Vec<bool>,
    cursor: usize,
    next_session: u64,
    transcripts: Vec<QkdTranscript>,
}

/// Outcome of key establishment on one link.
#[derive(Debug, Clone)]
pub enum LinkOutcome {
    Keyed(LinkKeyring),
    Aborted {
        client_id: usize,
        reason: String,
        transcripts: Vec<QkdTranscript>,
    },
}

impl LinkOutcome {
    pub fn client_id(&self) -> usize {
        match self {
            LinkOutcome::Keyed(k) => k.client_id,
            LinkOutcome::Aborted { client_id, .. } => *client_id,
        }
    }

    pub fn transcripts(&self) -> &[QkdTranscript] {
        match self {
            LinkOutcome::Keyed(k) => &k.transcripts,
            LinkOutcome::Aborted { transcripts, .. } => transcripts,
        }
    }

    pub fn is_keyed(&self) -> bool {
        matches!(self, LinkOutcome::Keyed(_))
    }
}

fn qber_abort_message(r: &QkdSessionResult, policy: &QkdPolicy) -> String {
    format!(
        "QBER {:.4} above threshold {} in session {} (possible eavesdropping)",
        r.qber_estimate, policy.qber_abort_threshold, r.session_id
    )
}

impl LinkKeyring {
    fn session_seed(&self) -> u64 {
        derive_seed(self.master_seed, &[Stream::Qkd as u64, self.round as u64, self.client_id as u64])
    }

    /// Runs one more session, appending its key on success.
    fn run_session(&mut self) -> Result<()> {
        let r = run_bb84(self.n_qubits, &self.channel, &self.policy, self.session_seed(), self.next_session)?;
        self.next_session += 1;
        self.transcripts.push(r.transcript());
        match r.abort_reason {
            Some(AbortReason::QberAboveThreshold) => Err(Error::Security(qber_abort_message(&r, &self.policy))),
            // a short session contributes nothing
            Some(AbortReason::InsufficientKeyBits) => Ok(()),
            None => {
                self.client_bits.extend_from_slice(&r.key);
                self.server_bits.extend_from_slice(&r.receiver_key);
                Ok(())
            }
        }
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn available(&self) -> usize {
        self.client_bits.len() - self.cursor
    }

    pub fn used(&self) -> usize {
        self.cursor
    }

    pub fn transcripts(&self) -> &[QkdTranscript] {
        &self.transcripts
    }

    /// QBER of the session that established the link.
    pub fn first_qber(&self) -> Option<f64> {
        self.transcripts.first().map(|t| t.qber)
    }

    fn expected_yield(&self) -> f64 {
        self.n_qubits as f64 * self.channel.transmittance() * 0.5 * (1.0 - self.policy.sample_fraction)
    }

    /// Takes the next `bits` bits for one transfer. On shortfall, runs
    /// enough additional sessions to cover it and retries once.
    pub fn reserve(&mut self, bits: usize) -> Result<KeyPair> {
        if self.available() < bits {
            let shortfall = bits - self.available();
            let per_session = self.expected_yield().max(1.0);
            let sessions = (shortfall as f64 / per_session).ceil() as usize;
            if sessions > MAX_TOPUP_SESSIONS {
                return Err(Error::KeyExhaustion {
                    required: bits,
                    available: self.available(),
                });
            }
            for _ in 0..sessions.max(1) {
                self.run_session()?;
            }
            if self.available() < bits {
                return Err(Error::KeyExhaustion {
                    required: bits,
                    available: self.available(),
                });
            }
        }
        let offset = self.cursor;
        let range = offset..offset + bits;
        self.cursor += bits;
        let key_id = derive_seed(
            self.master_seed,
            &[Stream::KeyId as u64, self.round as u64, self.client_id as u64, offset as u64],
        );
        Ok(KeyPair {
            client: QkdKey::new(self.client_bits[range.clone()].to_vec(), key_id)?,
            server: QkdKey::new(self.server_bits[range].to_vec(), key_id)?,
            offset,
        })
    }
}

/// Settings shared by all links' key establishment.
#[derive(Debug, Clone)]
pub struct LinkSetup<'a> {
    pub master_seed: u64,
    pub round: usize,
    pub n_qubits: usize,
    pub policy: QkdPolicy,
    /// Channel per client, indexed by client id.
    pub channels: &'a [QuantumChannelConfig],
    pub parallel: bool,
}

fn establish_one(setup: &LinkSetup<'_>, client_id: usize) -> Result<LinkOutcome> {
    let channel = *setup.channels.get(client_id).ok_or_else(|| {
        Error::config(format!("no quantum channel configured for client {client_id}"))
    })?;
    let mut ring = LinkKeyring {
        client_id,
        round: setup.round,
        master_seed: setup.master_seed,
        n_qubits: setup.n_qubits,
        channel,
        policy: setup.policy,
        client_bits: Vec::new(),
        server_bits: Vec::new(),
        cursor: 0,
        next_session: 0,
        transcripts: Vec::new(),
    };
    match ring.run_session() {
        Ok(()) => Ok(LinkOutcome::Keyed(ring)),
        Err(Error::Security(reason)) => Ok(LinkOutcome::Aborted {
            client_id,
            reason,
            transcripts: ring.transcripts,
        }),
        Err(e) => Err(e),
    }
}

/// Runs one BB84 session per link without judging the overall outcome.
pub fn establish_links(setup: &LinkSetup<'_>, client_ids: &[usize]) -> Result<Vec<LinkOutcome>> {
    let outcomes: Vec<Result<LinkOutcome>> = if setup.parallel {
        client_ids.par_iter().map(|&id| establish_one(setup, id)).collect()
    } else {
        client_ids.iter().map(|&id| establish_one(setup, id)).collect()
    };
    outcomes.into_iter().collect()
}

/// One independent BB84 session per client link. Links whose QBER exceeds
/// the policy threshold come back as [`LinkOutcome::Aborted`]; if every
/// link aborts the round fails with a security alert.
pub fn establish_link_keys(setup: &LinkSetup<'_>, client_ids: &[usize]) -> Result<Vec<LinkOutcome>> {
    let outcomes = establish_links(setup, client_ids)?;
    if !outcomes.is_empty() && outcomes.iter().all(|o| !o.is_keyed()) {
        return Err(Error::Security(format!(
            "all {} links aborted key establishment in round {}",
            outcomes.len(),
            setup.round
        )));
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(channels: &[QuantumChannelConfig]) -> LinkSetup<'_> {
        LinkSetup {
            master_seed: 1,
            round: 0,
            n_qubits: 2048,
            policy: QkdPolicy::default(),
            channels,
            parallel: false,
        }
    }

    #[test]
    fn clean_links_all_keyed() {
        let ch = vec![QuantumChannelConfig::default(); 3];
        let out = establish_link_keys(&setup(&ch), &[0, 1, 2]).unwrap();
        assert!(out.iter().all(LinkOutcome::is_keyed));
    }

    #[test]
    fn attacked_link_is_isolated() {
        let mut ch = vec![QuantumChannelConfig::default(); 3];
        ch[1] = ch[1].with_eve(1.0);
        let out = establish_link_keys(&setup(&ch), &[0, 1, 2]).unwrap();
        assert!(out[0].is_keyed() && out[2].is_keyed());
        assert!(matches!(&out[1], LinkOutcome::Aborted { client_id: 1, .. }));

        // unaffected links get the same material as without the attack
        let clean = vec![QuantumChannelConfig::default(); 3];
        let base = establish_link_keys(&setup(&clean), &[0, 1, 2]).unwrap();
        for i in [0, 2] {
            let (LinkOutcome::Keyed(a), LinkOutcome::Keyed(b)) = (&out[i], &base[i]) else { panic!() };
            assert_eq!(a.client_bits, b.client_bits);
        }
    }

    #[test]
    fn all_attacked_is_security_alert() {
        let ch = vec![QuantumChannelConfig::default().with_eve(1.0); 2];
        assert!(matches!(establish_link_keys(&setup(&ch), &[0, 1]), Err(Error::Security(_))));
    }

    #[test]
    fn reruns_are_identical() {
        let ch = vec![QuantumChannelConfig::default(); 2];
        let a = establish_link_keys(&setup(&ch), &[0, 1]).unwrap();
        let mut s = setup(&ch);
        s.parallel = true;
        let b = establish_link_keys(&s, &[0, 1]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let (LinkOutcome::Keyed(x), LinkOutcome::Keyed(y)) = (x, y) else { panic!() };
            assert_eq!(x.client_bits, y.client_bits);
        }
    }

    #[test]
    fn reservations_are_disjoint_and_top_up() {
        let ch = vec![QuantumChannelConfig::default()];
        let mut out = establish_link_keys(&setup(&ch), &[0]).unwrap();
        let LinkOutcome::Keyed(ring) = &mut out[0] else { panic!() };
        let first = ring.available();
        let up = ring.reserve(200).unwrap();
        let down = ring.reserve(200).unwrap();
        assert_eq!(up.offset, 0);
        assert_eq!(down.offset, 200);
        assert_ne!(up.client.key_id(), down.client.key_id());
        assert_eq!(up.client.bits(), &ring.client_bits[..200]);
        assert_eq!(down.client.bits(), &ring.client_bits[200..400]);
        // more than one session's worth forces top-up sessions
        let big = ring.reserve(first * 3).unwrap();
        assert_eq!(big.offset, 400);
        assert!(ring.transcripts().len() > 1);
    }

    #[test]
    fn hopeless_channel_exhausts() {
        let ch = vec![QuantumChannelConfig { gamma: 5.0, length_km: 10.0, ..Default::default() }];
        let mut out = establish_link_keys(&setup(&ch), &[0]).unwrap();
        let LinkOutcome::Keyed(ring) = &mut out[0] else { panic!() };
        assert_eq!(ring.available(), 0);
        assert!(matches!(ring.reserve(256), Err(Error::KeyExhaustion { .. })));
    }
}
