use std::collections::HashSet;

use super::aggregate::{aggregate, AggregationMode, ClientUpdate};
use super::keys::KeyPair;
use super::Transport;
use crate::crypto::{decrypt_bytes, deserialize_weights, encrypt_bytes, serialize_weights, Ciphertext, CipherMode};
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParameters};

/// The aggregation server. It holds the global model and never sees
/// client samples: its inputs are frames of bytes and sample counts.
#[derive(Debug, Clone)]
pub struct Server {
    arch: Architecture,
    global: ModelParameters<f64>,
    round: usize,
    registered: Vec<usize>,
    seen_key_ids: HashSet<u64>,
}

impl Server {
    pub fn new(arch: Architecture, initial: ModelParameters<f64>, registered: Vec<usize>) -> Result<Self> {
        initial.check_architecture(&arch)?;
        Ok(Self {
            arch,
            global: initial,
            round: 0,
            registered,
            seen_key_ids: HashSet::new(),
        })
    }

    pub fn global(&self) -> &ModelParameters<f64> {
        &self.global
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn registered(&self) -> &[usize] {
        &self.registered
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    /// Starts round `t`; key ids are tracked per round.
    pub fn begin_round(&mut self, t: usize) {
        self.round = t;
        self.seen_key_ids.clear();
    }

    fn claim_key_id(&mut self, key_id: u64) -> Result<()> {
        if !self.seen_key_ids.insert(key_id) {
            return Err(Error::Protocol(format!(
                "key id {key_id:#x} reused within round {}",
                self.round
            )));
        }
        Ok(())
    }

    /// Opens one client's upload frame.
    pub fn receive_upload(
        &mut self,
        client_id: usize,
        frame: &[u8],
        transport: Transport,
        key: Option<&KeyPair>,
        cipher: CipherMode,
    ) -> Result<ModelParameters<f64>> {
        if !self.registered.contains(&client_id) {
            return Err(Error::Protocol(format!("upload from unregistered client {client_id}")));
        }
        let bytes = match transport {
            Transport::Plaintext => frame.to_vec(),
            Transport::Encrypted => {
                let key = key.ok_or_else(|| Error::Key(format!("no upload key for client {client_id}")))?;
                let ct = Ciphertext::from_bytes(frame)?;
                self.claim_key_id(ct.key_id)?;
                decrypt_bytes(&ct, &key.server, cipher)?
            }
        };
        let w = deserialize_weights(&bytes)?;
        w.check_architecture(&self.arch)?;
        Ok(w)
    }

    /// Aggregates and installs a new global model.
    pub fn aggregate(&mut self, updates: &[ClientUpdate<f64>], mode: AggregationMode) -> Result<&ModelParameters<f64>> {
        let next = aggregate(&self.global, updates, mode)?;
        if !next.is_finite() {
            return Err(Error::Numeric("aggregated weights are not finite".into()));
        }
        self.global = next;
        Ok(&self.global)
    }

    /// Frame carrying the current global model to one client.
    pub fn broadcast_frame(&mut self, transport: Transport, key: Option<&KeyPair>, cipher: CipherMode) -> Result<Vec<u8>> {
        let plain = serialize_weights(&self.global)?;
        match transport {
            Transport::Plaintext => Ok(plain),
            Transport::Encrypted => {
                let key = key.ok_or_else(|| Error::Key("encrypted broadcast requires a download key".into()))?;
                self.claim_key_id(key.server.key_id())?;
                encrypt_bytes(&plain, &key.server, cipher)?.to_bytes()
            }
        }
    }
}
