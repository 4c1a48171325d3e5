//! Experiment driver: config parsing, runs, metrics files and reports.
//!
//! Output files under the run directory:
//!
//! * `rounds.jsonl`: one round record per line
//! * `summary.json`: resolved config, stop reason, final metrics, link security
//! * `final_weights.qflw`: final global weights in the wire format
//! * `timing.json`: wall-clock durations, kept apart so the other files are
//!   byte-reproducible from the config

mod config;
mod probe;
mod report;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{
    parse_config, parse_config_file, Attack, DataConfig, ExperimentConfig, PartitionMode, QkdConfig, TrainingConfig,
    MAX_CLIENTS, MAX_ROUNDS,
};
pub use probe::{run_probe, ProbeConfig, ProbeRow};
pub use report::{compare_baseline_encrypted, render_table, ComparisonReport, ModeResult, TableRow};

use crate::crypto::serialize_weights;
use crate::digest::fnv1a64;
use crate::error::{Error, Result};
use crate::federation::{run_training, RoundRecord, StopReason, Transport};
use crate::model::ModelParameters;
use crate::qkd::{qkd_success_probability, transmittance};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SECURITY: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Process exit status for an error that ended a command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Io { .. } => EXIT_IO,
        Error::Security(_) | Error::SessionAborted { .. } => EXIT_SECURITY,
        _ => EXIT_OTHER,
    }
}

/// Security view of one client-server link across a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSecurity {
    pub client_id: usize,
    pub gamma: f64,
    pub length_km: f64,
    pub eve_rate: f64,
    /// 1 − e^(−γL)
    pub success_probability: f64,
    /// e^(−γL)
    pub transmittance: f64,
    /// QBER of the round's first session, per round (None: no session ran).
    pub qber_per_round: Vec<Option<f64>>,
    pub aborted_rounds: Vec<usize>,
    pub tampered_rounds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub stop: StopReason,
    pub rounds_run: usize,
    pub failed_rounds: Vec<usize>,
    pub security_alert_rounds: Vec<usize>,
    pub final_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub links: Vec<LinkSecurity>,
    /// FNV-1a-64 of the final weights' wire bytes, hex.
    pub final_weights_digest: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: RunSummary,
    pub records: Vec<RoundRecord>,
    pub final_weights: ModelParameters<f64>,
}

impl ExperimentOutcome {
    /// 0 on completion; 3 when fail-fast stopped on a security failure,
    /// 1 when it stopped on any other failure.
    pub fn exit_status(&self) -> i32 {
        match self.summary.stop {
            StopReason::FailFast { security: true, .. } => EXIT_SECURITY,
            StopReason::FailFast { security: false, .. } => EXIT_OTHER,
            _ => EXIT_OK,
        }
    }
}

pub(crate) fn link_security(cfg: &ExperimentConfig, records: &[RoundRecord]) -> Vec<LinkSecurity> {
    cfg.channels()
        .iter()
        .enumerate()
        .map(|(i, ch)| {
            let mine = records.iter().map(|r| (r.t, &r.clients[i]));
            LinkSecurity {
                client_id: i,
                gamma: ch.gamma,
                length_km: ch.length_km,
                eve_rate: ch.eve_rate,
                success_probability: qkd_success_probability(ch.gamma, ch.length_km),
                transmittance: transmittance(ch.gamma, ch.length_km),
                qber_per_round: mine.clone().map(|(_, c)| c.qber).collect(),
                aborted_rounds: mine.clone().filter(|(_, c)| c.aborted).map(|(t, _)| t).collect(),
                tampered_rounds: mine.filter(|(_, c)| c.tampered_in_transit).map(|(t, _)| t).collect(),
            }
        })
        .collect()
}

/// Runs one federation as configured. Writes output files when `out_dir`
/// is given.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    let cfg = cfg.clone().resolve()?;
    let fed = cfg.federation()?;
    let (partition, test) = cfg.datasets()?;
    let out = run_training(&fed, partition, test)?;
    let wire = serialize_weights(&out.final_weights)?;
    let summary = RunSummary {
        links: link_security(&cfg, &out.records),
        config: cfg,
        stop: out.stop,
        rounds_run: out.records.len(),
        failed_rounds: out.records.iter().filter(|r| r.is_failed()).map(|r| r.t).collect(),
        security_alert_rounds: out.records.iter().filter(|r| r.security_alert).map(|r| r.t).collect(),
        final_accuracy: out.records.last().map(|r| r.accuracy),
        final_loss: out.records.last().map(|r| r.loss),
        final_weights_digest: format!("{:016x}", fnv1a64(&wire)),
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if !out.records.is_empty() {
            emit_metrics(&out.records, dir.join("rounds.jsonl"))?;
        } else {
            write_file(&dir.join("rounds.jsonl"), b"")?;
        }
        write_json(&dir.join("summary.json"), &summary)?;
        write_file(&dir.join("final_weights.qflw"), &wire)?;
        let timing = serde_json::json!({
            "round_wall_time_ms": out.records.iter().map(|r| r.wall_time_ms).collect::<Vec<_>>(),
        });
        write_json(&dir.join("timing.json"), &timing)?;
    }
    Ok(ExperimentOutcome {
        summary,
        records: out.records,
        final_weights: out.final_weights,
    })
}

/// Writes one JSON object per round, one per line.
pub fn emit_metrics(records: &[RoundRecord], path: impl AsRef<Path>) -> Result<()> {
    if records.is_empty() {
        return Err(Error::config("no round records to emit"));
    }
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_file(path.as_ref(), &buf)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Config with the transport overridden.
pub(crate) fn with_transport(cfg: &ExperimentConfig, transport: Transport) -> ExperimentConfig {
    ExperimentConfig {
        transport,
        ..cfg.clone()
    }
}
