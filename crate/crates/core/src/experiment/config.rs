use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crypto::{CipherMode, MIN_KEY_BITS};
use crate::data::{generate_dataset, partition_iid, partition_label_skew, train_test_split, Partition, SyntheticConfig};
use crate::error::{Error, Result};
use crate::federation::{AggregationMode, EarlyStop, FederationConfig, LocalTraining, QkdSettings, Transport};
use crate::model::{Architecture, Dataset};
use crate::qkd::{QkdPolicy, QuantumChannelConfig};

pub const MAX_CLIENTS: usize = 1024;
pub const MAX_ROUNDS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    #[default]
    Iid,
    LabelSkew,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub samples_per_class: usize,
    pub image_size: (usize, usize),
    pub noise_sigma: f64,
    pub partition: PartitionMode,
    /// Fraction of each shard drawn from its dominant class (label_skew only).
    pub skew: f64,
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SyntheticConfig::default();
        Self {
            samples_per_class: s.samples_per_class,
            image_size: s.image_size,
            noise_sigma: s.noise_sigma,
            partition: PartitionMode::Iid,
            skew: 0.8,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub rounds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub aggregation: AggregationMode,
    /// 0 disables early stopping.
    pub early_stop_epsilon: f64,
    pub early_stop_patience: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            epochs: 2,
            batch_size: 10,
            learning_rate: 0.1,
            aggregation: AggregationMode::default(),
            early_stop_epsilon: 0.0,
            early_stop_patience: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QkdConfig {
    pub n_qubits: usize,
    /// Used for every link unless `channels` is given.
    pub channel: QuantumChannelConfig,
    /// Per-link channels, one per client.
    pub channels: Option<Vec<QuantumChannelConfig>>,
    pub policy: QkdPolicy,
    /// Use the raw key as a one-time pad, consuming one key bit per payload bit.
    pub strict_otp: bool,
    /// Key bits per transfer when the key seeds an expanded keystream.
    pub expanded_key_bits: usize,
}

impl Default for QkdConfig {
    fn default() -> Self {
        Self {
            n_qubits: 4096,
            channel: QuantumChannelConfig::default(),
            channels: None,
            policy: QkdPolicy::default(),
            strict_otp: false,
            expanded_key_bits: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Attack {
    #[default]
    None,
    /// Intercept-resend on the listed links.
    Eavesdrop { clients: Vec<usize>, eve_rate: f64 },
    EavesdropAll { eve_rate: f64 },
    /// Flip one bit of the listed clients' upload frames in transit.
    Tamper { clients: Vec<usize> },
}

/// Everything needed to reproduce one experiment.
///
/// Parsing fills every omitted field with its default, and serializing the
/// result writes every field, so an emitted config documents the run fully.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub num_clients: usize,
    pub data: DataConfig,
    /// Defaults to the standard small CNN sized to `data.image_size`.
    pub model: Option<Architecture>,
    pub training: TrainingConfig,
    pub qkd: QkdConfig,
    pub transport: Transport,
    pub attack: Attack,
    pub fail_fast: bool,
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 42,
            num_clients: 4,
            data: DataConfig::default(),
            model: None,
            training: TrainingConfig::default(),
            qkd: QkdConfig::default(),
            transport: Transport::Encrypted,
            attack: Attack::None,
            fail_fast: false,
            parallel: true,
        }
    }
}

fn range_err(name: &str, range: &str, got: impl std::fmt::Display) -> Error {
    Error::config(format!("{name} must be in {range}, got {got}"))
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(range_err(name, "[0, 1]", v))
    }
}

impl ExperimentConfig {
    /// Fills `model` from the image size if absent, then validates.
    pub fn resolve(mut self) -> Result<Self> {
        if self.model.is_none() {
            let (h, w) = self.data.image_size;
            if h < 8 || w < 8 {
                return Err(range_err("data.image_size", "[8, inf) per side", format!("{h}x{w}")));
            }
            self.model = Some(Architecture::small_cnn(h, w, 4));
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_CLIENTS).contains(&self.num_clients) {
            return Err(range_err("num_clients", &format!("[1, {MAX_CLIENTS}]"), self.num_clients));
        }
        let d = &self.data;
        self.synthetic().validate()?;
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(range_err("data.test_fraction", "(0, 1)", d.test_fraction));
        }
        check_unit("data.skew", d.skew)?;
        let per_class_train = d.samples_per_class - (d.samples_per_class as f64 * d.test_fraction).round() as usize;
        if 2 * per_class_train < self.num_clients {
            return Err(Error::config(format!(
                "{} training samples cannot cover {} clients",
                2 * per_class_train,
                self.num_clients
            )));
        }
        let arch = self.arch()?;
        let (h, w) = d.image_size;
        if arch.input() != [1, h, w] {
            return Err(Error::config(format!(
                "model input {:?} does not match data image size [1, {h}, {w}]",
                arch.input()
            )));
        }

        let t = &self.training;
        if t.rounds > MAX_ROUNDS {
            return Err(range_err("training.rounds", &format!("[0, {MAX_ROUNDS}]"), t.rounds));
        }
        if t.epochs == 0 {
            return Err(range_err("training.epochs", "[1, inf)", 0));
        }
        if t.batch_size == 0 {
            return Err(range_err("training.batch_size", "[1, inf)", 0));
        }
        if !(t.learning_rate.is_finite() && t.learning_rate >= 0.0) {
            return Err(range_err("training.learning_rate", "[0, inf)", t.learning_rate));
        }
        if !(t.early_stop_epsilon.is_finite() && t.early_stop_epsilon >= 0.0) {
            return Err(range_err("training.early_stop_epsilon", "[0, inf)", t.early_stop_epsilon));
        }
        if t.early_stop_patience == 0 {
            return Err(range_err("training.early_stop_patience", "[1, inf)", 0));
        }

        let q = &self.qkd;
        if q.n_qubits == 0 {
            return Err(range_err("qkd.n_qubits", "[1, inf)", 0));
        }
        q.policy.validate()?;
        let usable = q.n_qubits - q.policy.disclosed_count(q.n_qubits);
        if usable < q.policy.min_key_bits {
            return Err(Error::config(format!(
                "qkd.n_qubits = {} leaves at most {usable} key bits, below min_key_bits = {}",
                q.n_qubits, q.policy.min_key_bits
            )));
        }
        if q.expanded_key_bits < MIN_KEY_BITS {
            return Err(range_err(
                "qkd.expanded_key_bits",
                &format!("[{MIN_KEY_BITS}, inf)"),
                q.expanded_key_bits,
            ));
        }
        if let Some(chs) = &q.channels {
            if chs.len() != self.num_clients {
                return Err(Error::config(format!(
                    "qkd.channels has {} entries for {} clients",
                    chs.len(),
                    self.num_clients
                )));
            }
        }
        for ch in self.channels() {
            ch.validate()?;
        }

        let check_clients = |clients: &[usize]| -> Result<()> {
            match clients.iter().find(|&&c| c >= self.num_clients) {
                Some(c) => Err(range_err(
                    "attack client id",
                    &format!("[0, {}]", self.num_clients - 1),
                    c,
                )),
                None => Ok(()),
            }
        };
        match &self.attack {
            Attack::None => {}
            Attack::Eavesdrop { clients, eve_rate } => {
                check_clients(clients)?;
                check_unit("attack.eve_rate", *eve_rate)?;
            }
            Attack::EavesdropAll { eve_rate } => check_unit("attack.eve_rate", *eve_rate)?,
            Attack::Tamper { clients } => check_clients(clients)?,
        }
        Ok(())
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            samples_per_class: self.data.samples_per_class,
            image_size: self.data.image_size,
            noise_sigma: self.data.noise_sigma,
            seed: self.master_seed,
        }
    }

    pub fn arch(&self) -> Result<Architecture> {
        match &self.model {
            Some(a) => Ok(a.clone()),
            None => {
                let (h, w) = self.data.image_size;
                Ok(Architecture::small_cnn(h, w, 4))
            }
        }
    }

    /// Channel per link after applying the attack scenario.
    pub fn channels(&self) -> Vec<QuantumChannelConfig> {
        let mut chs = self
            .qkd
            .channels
            .clone()
            .unwrap_or_else(|| vec![self.qkd.channel; self.num_clients]);
        match &self.attack {
            Attack::Eavesdrop { clients, eve_rate } => {
                for &c in clients {
                    if let Some(ch) = chs.get_mut(c) {
                        ch.eve_rate = *eve_rate;
                    }
                }
            }
            Attack::EavesdropAll { eve_rate } => chs.iter_mut().for_each(|ch| ch.eve_rate = *eve_rate),
            Attack::None | Attack::Tamper { .. } => {}
        }
        chs
    }

    pub fn federation(&self) -> Result<FederationConfig> {
        let t = &self.training;
        let tamper_uploads: BTreeSet<usize> = match &self.attack {
            Attack::Tamper { clients } => clients.iter().copied().collect(),
            _ => BTreeSet::new(),
        };
        Ok(FederationConfig {
            master_seed: self.master_seed,
            arch: self.arch()?,
            rounds: t.rounds,
            local: LocalTraining {
                epochs: t.epochs,
                batch_size: t.batch_size,
                learning_rate: t.learning_rate,
            },
            aggregation: t.aggregation,
            early_stop: EarlyStop {
                epsilon: t.early_stop_epsilon,
                patience: t.early_stop_patience,
            },
            transport: self.transport,
            qkd: QkdSettings {
                n_qubits: self.qkd.n_qubits,
                channels: self.channels(),
                policy: self.qkd.policy,
                cipher: if self.qkd.strict_otp {
                    CipherMode::StrictOtp
                } else {
                    CipherMode::Expanded
                },
                expanded_key_bits: self.qkd.expanded_key_bits,
            },
            tamper_uploads,
            fail_fast: self.fail_fast,
            parallel: self.parallel,
        })
    }

    /// Generates, splits and partitions the synthetic data.
    pub fn datasets(&self) -> Result<(Partition<f64>, Dataset<f64>)> {
        let all = generate_dataset::<f64>(&self.synthetic())?;
        let (train, test) = train_test_split(&all, self.data.test_fraction, self.master_seed)?;
        let part = match self.data.partition {
            PartitionMode::Iid => partition_iid(&train, self.num_clients, self.master_seed)?,
            PartitionMode::LabelSkew => {
                partition_label_skew(&train, self.num_clients, self.data.skew, self.master_seed)?
            }
        };
        Ok((part, test))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Parses and resolves a JSON config. Unknown fields are rejected by name.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
    cfg.resolve()
}

pub fn parse_config_file(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
