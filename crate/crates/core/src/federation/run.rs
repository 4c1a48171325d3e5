//! Round orchestration.

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{AggregationMode, ClientUpdate};
use super::client::{Client, LocalTraining, LocalUpdate};
use super::keys::{establish_links, KeyPair, LinkKeyring, LinkOutcome, LinkSetup};
use super::record::{ClientRoundRecord, RoundRecord, RoundStatus};
use super::server::Server;
use super::Transport;
use crate::crypto::{wire_len, CipherMode, MIN_KEY_BITS};
use crate::data::Partition;
use crate::error::{Error, Result};
use crate::model::{evaluate, init_model, Architecture, Dataset, ModelParameters};
use crate::qkd::{QkdPolicy, QuantumChannelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct QkdSettings {
    pub n_qubits: usize,
    /// Channel per client link, indexed by client id.
    pub channels: Vec<QuantumChannelConfig>,
    pub policy: QkdPolicy,
    pub cipher: CipherMode,
    /// Key bits consumed per transfer in expanded-keystream mode.
    pub expanded_key_bits: usize,
}

/// Stop when |Δ test loss| < epsilon for `patience` consecutive rounds.
/// `epsilon = 0` disables early stopping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub epsilon: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub master_seed: u64,
    pub arch: Architecture,
    pub rounds: usize,
    pub local: LocalTraining,
    pub aggregation: AggregationMode,
    pub early_stop: EarlyStop,
    pub transport: Transport,
    pub qkd: QkdSettings,
    /// Clients whose upload frames get a bit flipped in transit.
    pub tamper_uploads: BTreeSet<usize>,
    pub fail_fast: bool,
    /// Run per-client work on the rayon pool.
    pub parallel: bool,
}

impl FederationConfig {
    /// Key bits consumed by one transfer in either direction.
    pub fn bits_per_transfer(&self) -> usize {
        match self.qkd.cipher {
            CipherMode::Expanded => self.qkd.expanded_key_bits,
            CipherMode::StrictOtp => wire_len(&self.arch.parameter_dims()) * 8,
        }
    }

    pub fn validate(&self, num_clients: usize) -> Result<()> {
        if self.local.epochs == 0 {
            return Err(Error::config("local epochs must be >= 1"));
        }
        if self.local.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.local.learning_rate >= 0.0 && self.local.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and >= 0"));
        }
        if self.early_stop.epsilon.is_nan() || self.early_stop.epsilon < 0.0 || self.early_stop.patience == 0 {
            return Err(Error::config("early stop needs epsilon >= 0 and patience >= 1"));
        }
        if self.transport == Transport::Encrypted {
            if self.qkd.channels.len() != num_clients {
                return Err(Error::config(format!(
                    "{} quantum channels configured for {num_clients} clients",
                    self.qkd.channels.len()
                )));
            }
            for ch in &self.qkd.channels {
                ch.validate()?;
            }
            self.qkd.policy.validate()?;
            if self.qkd.expanded_key_bits < MIN_KEY_BITS {
                return Err(Error::config(format!(
                    "expanded_key_bits must be >= {MIN_KEY_BITS}, got {}",
                    self.qkd.expanded_key_bits
                )));
            }
        }
        if let Some(&bad) = self.tamper_uploads.iter().find(|&&c| c >= num_clients) {
            return Err(Error::config(format!("tamper target {bad} is not a client")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    /// All configured rounds ran.
    Completed,
    EarlyStop { round: usize },
    /// `fail_fast` halted training after a failed round.
    FailFast { round: usize, reason: String, security: bool },
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub records: Vec<RoundRecord>,
    pub initial_weights: ModelParameters<f64>,
    pub final_weights: ModelParameters<f64>,
    pub stop: StopReason,
}

/// A broadcast frame and the key pair it was sealed under (None in plaintext).
pub type BroadcastFrame = (Vec<u8>, Option<KeyPair>);

/// Sends the current global model to every keyed client. Entries are
/// `(client_id, frame)`; failures affect only their own client.
pub fn broadcast_global(
    server: &mut Server,
    links: &mut [(usize, Option<&mut LinkKeyring>)],
    transport: Transport,
    cipher: CipherMode,
    bits_per_transfer: usize,
) -> Vec<(usize, Result<BroadcastFrame>)> {
    links
        .iter_mut()
        .map(|(id, ring)| {
            let res = (|| {
                let key = match (transport, ring) {
                    (Transport::Plaintext, _) => None,
                    (Transport::Encrypted, Some(ring)) => Some(ring.reserve(bits_per_transfer)?),
                    (Transport::Encrypted, None) => {
                        return Err(Error::Key(format!("client {id} has no keyed link this round")))
                    }
                };
                let frame = server.broadcast_frame(transport, key.as_ref(), cipher)?;
                Ok((frame, key))
            })();
            (*id, res)
        })
        .collect()
}

/// A full federation: clients with private shards, the server, and the
/// orchestrator's held-out test set.
pub struct Federation {
    cfg: FederationConfig,
    clients: Vec<Client>,
    server: Server,
    test: Dataset<f64>,
    initial: ModelParameters<f64>,
}

impl Federation {
    pub fn new(cfg: FederationConfig, partition: Partition<f64>, test: Dataset<f64>) -> Result<Self> {
        let num_clients = partition.num_clients();
        if num_clients == 0 {
            return Err(Error::config("federation needs at least one client"));
        }
        cfg.validate(num_clients)?;
        if test.is_empty() {
            return Err(Error::config("test set is empty"));
        }
        if test.shape() != cfg.arch.input() {
            return Err(Error::Shape {
                expected: cfg.arch.input().to_vec(),
                actual: test.shape().to_vec(),
            });
        }
        let initial: ModelParameters<f64> = init_model(&cfg.arch, cfg.master_seed);
        let clients = partition
            .into_shards()
            .into_iter()
            .enumerate()
            .map(|(id, shard)| Client::new(id, shard, initial.clone()))
            .collect::<Result<Vec<_>>>()?;
        let server = Server::new(cfg.arch.clone(), initial.clone(), (0..num_clients).collect())?;
        Ok(Self {
            cfg,
            clients,
            server,
            test,
            initial,
        })
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    fn train_participants(&self, participants: &[usize], t: usize) -> Vec<(usize, Result<LocalUpdate>)> {
        let job = |&i: &usize| {
            let c = &self.clients[i];
            (i, c.local_train(&self.cfg.arch, c.installed(), &self.cfg.local, self.cfg.master_seed, t))
        };
        if self.cfg.parallel {
            participants.par_iter().map(job).collect()
        } else {
            participants.iter().map(job).collect()
        }
    }

    /// Runs round `t` to completion. Only configuration faults are errors;
    /// security and integrity failures are recorded.
    pub fn run_round(&mut self, t: usize) -> Result<RoundRecord> {
        let started = Instant::now();
        let cfg = self.cfg.clone();
        let n = self.clients.len();
        let ids: Vec<usize> = (0..n).collect();
        let bits = cfg.bits_per_transfer();
        self.server.begin_round(t);

        let mut recs: Vec<ClientRoundRecord> = self
            .clients
            .iter()
            .map(|c| ClientRoundRecord {
                client_id: c.id(),
                samples: c.samples(),
                local_loss: None,
                qber: None,
                key_bits_used: 0,
                qkd_sessions: Vec::new(),
                aborted: false,
                abort_reason: None,
                tampered_in_transit: false,
                received_global: false,
                download_error: None,
            })
            .collect();
        let abort = |recs: &mut Vec<ClientRoundRecord>, i: usize, reason: String| {
            recs[i].aborted = true;
            recs[i].abort_reason.get_or_insert(reason);
        };

        // Key establishment.
        let mut rings: Vec<Option<LinkKeyring>> = (0..n).map(|_| None).collect();
        let mut failure: Option<String> = None;
        let mut security_alert = false;
        if cfg.transport == Transport::Encrypted {
            let setup = LinkSetup {
                master_seed: cfg.master_seed,
                round: t,
                n_qubits: cfg.qkd.n_qubits,
                policy: cfg.qkd.policy,
                channels: &cfg.qkd.channels,
                parallel: cfg.parallel,
            };
            for outcome in establish_links(&setup, &ids)? {
                let i = outcome.client_id();
                match outcome {
                    LinkOutcome::Keyed(ring) => rings[i] = Some(ring),
                    LinkOutcome::Aborted { reason, transcripts, .. } => {
                        recs[i].qber = transcripts.first().map(|s| s.qber);
                        recs[i].qkd_sessions = transcripts;
                        abort(&mut recs, i, format!("link aborted: {reason}"));
                    }
                }
            }
            if rings.iter().all(Option::is_none) {
                security_alert = true;
                failure = Some(format!("security alert: all {n} links aborted key establishment"));
            }
        }
        let link_ok = |rings: &[Option<LinkKeyring>], i: usize| cfg.transport == Transport::Plaintext || rings[i].is_some();

        // Local training and upload.
        let mut updates: Vec<ClientUpdate<f64>> = Vec::new();
        if failure.is_none() {
            let participants: Vec<usize> = ids.iter().copied().filter(|&i| link_ok(&rings, i)).collect();
            for (i, result) in self.train_participants(&participants, t) {
                let update = match result {
                    Ok(u) => u,
                    Err(e) => {
                        abort(&mut recs, i, format!("local training failed: {e}"));
                        continue;
                    }
                };
                recs[i].local_loss = Some(update.loss);
                let key = match (cfg.transport, rings[i].as_mut()) {
                    (Transport::Encrypted, Some(ring)) => match ring.reserve(bits) {
                        Ok(k) => Some(k),
                        Err(e) => {
                            if matches!(e, Error::Security(_)) {
                                security_alert = true;
                            }
                            abort(&mut recs, i, format!("upload key: {e}"));
                            continue;
                        }
                    },
                    _ => None,
                };
                let mut frame = match self.clients[i].package_update(&update.weights, cfg.transport, key.as_ref(), cfg.qkd.cipher) {
                    Ok(f) => f,
                    Err(e) => {
                        abort(&mut recs, i, format!("packaging failed: {e}"));
                        continue;
                    }
                };
                if cfg.tamper_uploads.contains(&i) {
                    if let Some(last) = frame.last_mut() {
                        *last ^= 1;
                    }
                    recs[i].tampered_in_transit = true;
                }
                match self.server.receive_upload(i, &frame, cfg.transport, key.as_ref(), cfg.qkd.cipher) {
                    Ok(w) => updates.push(ClientUpdate {
                        client_id: i,
                        samples: self.clients[i].samples(),
                        weights: w,
                    }),
                    Err(e) => abort(&mut recs, i, format!("upload rejected: {e}")),
                }
            }
            if updates.is_empty() {
                failure = Some("no valid client updates; global weights unchanged".into());
            }
        }

        // Aggregation and broadcast.
        if failure.is_none() {
            if let Err(e) = self.server.aggregate(&updates, cfg.aggregation) {
                failure = Some(format!("aggregation failed: {e}"));
            }
        }
        if failure.is_none() {
            let mut links: Vec<(usize, Option<&mut LinkKeyring>)> = rings
                .iter_mut()
                .enumerate()
                .filter(|(_, r)| cfg.transport == Transport::Plaintext || r.is_some())
                .map(|(i, r)| (i, r.as_mut()))
                .collect();
            let frames = broadcast_global(&mut self.server, &mut links, cfg.transport, cfg.qkd.cipher, bits);
            for (i, res) in frames {
                let installed = res.and_then(|(frame, key)| {
                    self.clients[i].install_global(&frame, cfg.transport, key.as_ref(), cfg.qkd.cipher, t)
                });
                match installed {
                    Ok(()) => recs[i].received_global = true,
                    Err(e) => recs[i].download_error = Some(e.to_string()),
                }
            }
        }

        for (i, ring) in rings.iter().enumerate() {
            if let Some(ring) = ring {
                recs[i].qber = ring.first_qber();
                recs[i].key_bits_used = ring.used();
                recs[i].qkd_sessions = ring.transcripts().to_vec();
            }
        }

        let eval = evaluate(self.server.global(), &cfg.arch, &self.test)?;
        Ok(RoundRecord {
            t,
            status: if failure.is_some() { RoundStatus::Failed } else { RoundStatus::Completed },
            failure,
            security_alert,
            included_clients: updates.len(),
            clients: recs,
            accuracy: eval.accuracy,
            loss: eval.loss,
            aggregation: cfg.aggregation.rule,
            normalization: cfg.aggregation.normalization,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs up to `rounds` rounds with early stopping and fail-fast.
    pub fn run(mut self) -> Result<TrainingOutcome> {
        let mut records: Vec<RoundRecord> = Vec::with_capacity(self.cfg.rounds);
        let mut stop = StopReason::Completed;
        let mut plateau = 0;
        for t in 0..self.cfg.rounds {
            let rec = self.run_round(t)?;
            let failed = rec.is_failed();
            let delta = records.last().map(|prev| (rec.loss - prev.loss).abs());
            let halt = failed && self.cfg.fail_fast;
            if halt {
                stop = StopReason::FailFast {
                    round: t,
                    reason: rec.failure.clone().unwrap_or_default(),
                    security: rec.security_alert,
                };
            }
            records.push(rec);
            if halt {
                break;
            }
            if let Some(d) = delta {
                plateau = if d < self.cfg.early_stop.epsilon { plateau + 1 } else { 0 };
                if plateau >= self.cfg.early_stop.patience {
                    stop = StopReason::EarlyStop { round: t };
                    break;
                }
            }
        }
        Ok(TrainingOutcome {
            records,
            initial_weights: self.initial,
            final_weights: self.server.global().clone(),
            stop,
        })
    }
}

/// Builds a federation over `partition` and trains it.
pub fn run_training(
    cfg: &FederationConfig,
    partition: Partition<f64>,
    test: Dataset<f64>,
) -> Result<TrainingOutcome> {
    Federation::new(cfg.clone(), partition, test)?.run()
}
