use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;

use super::keys::KeyPair;
use super::Transport;
use crate::crypto::{
    decrypt_bytes, deserialize_weights, encrypt_bytes, serialize_weights, Ciphertext, CipherMode,
};
use crate::error::{Error, Result};
use crate::model::{backward, forward, loss_ce, sgd_step, Architecture, Dataset, ModelParameters};
use crate::rng::{stream_rng, Stream};

/// A client's local data. Every read of the samples is counted, so tests
/// can check which protocol phases touch raw data.
#[derive(Debug)]
pub struct PrivateShard {
    data: Dataset<f64>,
    reads: AtomicUsize,
}

impl PrivateShard {
    pub fn new(data: Dataset<f64>) -> Self {
        Self {
            data,
            reads: AtomicUsize::new(0),
        }
    }

    /// N_i. Sample counts are metadata and may leave the client.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn read(&self) -> &Dataset<f64> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.data
    }

    pub fn read_count(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }
}

/// Hyperparameters of local training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub weights: ModelParameters<f64>,
    /// Mean loss over the last epoch's batches, weighted by batch size.
    pub loss: f64,
}

/// Sample order for one local epoch, keyed by (master seed, client, round, epoch).
pub fn local_shuffle_order(master_seed: u64, client_id: usize, round: usize, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = stream_rng(
        master_seed,
        Stream::LocalShuffle,
        &[client_id as u64, round as u64, epoch as u64],
    );
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// A hospital node: its private shard and the global model it last installed.
#[derive(Debug)]
pub struct Client {
    id: usize,
    shard: PrivateShard,
    installed: ModelParameters<f64>,
    installed_round: Option<usize>,
}

impl Client {
    pub fn new(id: usize, shard: Dataset<f64>, initial: ModelParameters<f64>) -> Result<Self> {
        if shard.is_empty() {
            return Err(Error::config(format!("client {id} has an empty shard")));
        }
        Ok(Self {
            id,
            shard: PrivateShard::new(shard),
            installed: initial,
            installed_round: None,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn samples(&self) -> usize {
        self.shard.len()
    }

    pub fn shard(&self) -> &PrivateShard {
        &self.shard
    }

    pub fn installed(&self) -> &ModelParameters<f64> {
        &self.installed
    }

    /// Round whose broadcast was last installed (None: initial weights).
    pub fn installed_round(&self) -> Option<usize> {
        self.installed_round
    }

    /// Mini-batch SGD over the shard starting from `start`.
    pub fn local_train(
        &self,
        arch: &Architecture,
        start: &ModelParameters<f64>,
        cfg: &LocalTraining,
        master_seed: u64,
        round: usize,
    ) -> Result<LocalUpdate> {
        client_local_train(self, arch, start, cfg, master_seed, round)
    }

    /// Serializes and (in encrypted mode) seals local weights for upload.
    pub fn package_update(
        &self,
        weights: &ModelParameters<f64>,
        transport: Transport,
        key: Option<&KeyPair>,
        cipher: CipherMode,
    ) -> Result<Vec<u8>> {
        client_package_update(weights, transport, key, cipher)
    }

    /// Opens a broadcast frame and installs the global weights.
    pub fn install_global(
        &mut self,
        frame: &[u8],
        transport: Transport,
        key: Option<&KeyPair>,
        cipher: CipherMode,
        round: usize,
    ) -> Result<()> {
        let bytes = match transport {
            Transport::Plaintext => frame.to_vec(),
            Transport::Encrypted => {
                let key = key.ok_or_else(|| Error::Key("no download key for client".into()))?;
                decrypt_bytes(&Ciphertext::from_bytes(frame)?, &key.client, cipher)?
            }
        };
        let w = deserialize_weights(&bytes)?;
        if !w.same_structure(&self.installed) {
            return Err(Error::Protocol(format!("client {} received weights of the wrong shape", self.id)));
        }
        self.installed = w;
        self.installed_round = Some(round);
        Ok(())
    }
}

pub fn client_local_train(
    client: &Client,
    arch: &Architecture,
    start: &ModelParameters<f64>,
    cfg: &LocalTraining,
    master_seed: u64,
    round: usize,
) -> Result<LocalUpdate> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::config("epochs and batch_size must be >= 1"));
    }
    let data = client.shard.read();
    let mut w = start.clone();
    let mut last_loss = 0.0;
    for epoch in 0..cfg.epochs {
        let order = local_shuffle_order(master_seed, client.id, round, epoch, data.len());
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch(chunk)?;
            let (probs, cache) = forward(&w, arch, &batch)?;
            let loss = loss_ce(&probs, batch.labels())?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("client {} local loss diverged", client.id)));
            }
            loss_sum += loss * chunk.len() as f64;
            let grad = backward(&w, arch, &batch, &cache)?;
            w = sgd_step(&w, &grad, cfg.learning_rate)?;
        }
        last_loss = loss_sum / data.len() as f64;
    }
    Ok(LocalUpdate {
        weights: w,
        loss: last_loss,
    })
}

pub fn client_package_update(
    weights: &ModelParameters<f64>,
    transport: Transport,
    key: Option<&KeyPair>,
    cipher: CipherMode,
) -> Result<Vec<u8>> {
    let plain = serialize_weights(weights)?;
    match transport {
        Transport::Plaintext => Ok(plain),
        Transport::Encrypted => {
            let key = key.ok_or_else(|| Error::Key("encrypted transport requires an upload key".into()))?;
            encrypt_bytes(&plain, &key.client, cipher)?.to_bytes()
        }
    }
}
