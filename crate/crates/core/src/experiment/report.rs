use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{link_security, run_experiment, with_transport, write_file, write_json, ExperimentConfig, LinkSecurity};
use crate::error::Result;
use crate::federation::Transport;

/// Final metrics and per-round curves for one transport mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub transport: Transport,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub accuracy_series: Vec<f64>,
    pub loss_series: Vec<f64>,
    pub final_weights_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: ExperimentConfig,
    pub baseline: ModeResult,
    pub encrypted: ModeResult,
    /// encrypted − baseline
    pub delta_accuracy: f64,
    pub delta_loss: f64,
    /// Global weights bitwise equal and round records equal outside the
    /// key and QBER fields.
    pub parity: bool,
    pub parity_detail: Vec<String>,
    pub security: Vec<LinkSecurity>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub accuracy: f64,
    pub loss: f64,
}

/// Two-column performance table in Markdown.
pub fn render_table(rows: &[TableRow]) -> String {
    let mut s = String::from("Comparison of Model Performance\n\n| Model | Accuracy | Loss |\n|---|---|---|\n");
    for r in rows {
        let _ = writeln!(s, "| {} | {:.4} | {:.4} |", r.label, r.accuracy, r.loss);
    }
    s
}

fn fmt_opt(q: Option<f64>) -> String {
    q.map_or_else(|| "-".into(), |q| format!("{q:.4}"))
}

impl ComparisonReport {
    pub fn rows(&self) -> Vec<TableRow> {
        vec![
            TableRow {
                label: "Baseline Model".into(),
                accuracy: self.baseline.final_accuracy,
                loss: self.baseline.final_loss,
            },
            TableRow {
                label: "Encrypted Model (After Decryption)".into(),
                accuracy: self.encrypted.final_accuracy,
                loss: self.encrypted.final_loss,
            },
        ]
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        if !self.parity {
            s.push_str("!!! PARITY VIOLATION: encrypted and plaintext runs diverged !!!\n");
            for d in &self.parity_detail {
                let _ = writeln!(s, "!!! {d}");
            }
            s.push('\n');
        }
        s.push_str(&render_table(&self.rows()));
        let _ = writeln!(
            s,
            "\nparity: {}  (delta accuracy {:+.3e}, delta loss {:+.3e})",
            if self.parity { "exact" } else { "VIOLATED" },
            self.delta_accuracy,
            self.delta_loss
        );
        s.push_str("\n| Round | Baseline acc | Baseline loss | Encrypted acc | Encrypted loss |\n|---|---|---|---|---|\n");
        let (b, e) = (&self.baseline, &self.encrypted);
        for t in 0..b.accuracy_series.len().max(e.accuracy_series.len()) {
            let at = |v: &[f64]| fmt_opt(v.get(t).copied());
            let _ = writeln!(
                s,
                "| {t} | {} | {} | {} | {} |",
                at(&b.accuracy_series),
                at(&b.loss_series),
                at(&e.accuracy_series),
                at(&e.loss_series)
            );
        }
        s.push_str("\n| Link | gamma | L (km) | eve | P(success) | QBER by round | Aborted rounds |\n|---|---|---|---|---|---|---|\n");
        for l in &self.security {
            let qbers: Vec<String> = l.qber_per_round.iter().map(|&q| fmt_opt(q)).collect();
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {:.6} | {} | {:?} |",
                l.client_id,
                l.gamma,
                l.length_km,
                l.eve_rate,
                l.success_probability,
                qbers.join(" "),
                l.aborted_rounds
            );
        }
        s
    }

    /// Writes `report.json`, `report.md` and each mode's run files under
    /// `baseline/` and `encrypted/`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("report.json"), self)?;
        write_file(&dir.join("report.md"), self.render().as_bytes())
    }
}

/// Runs the config under plaintext and encrypted transport with the same
/// seed and data, and compares them.
pub fn compare_baseline_encrypted(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ComparisonReport> {
    let cfg = cfg.clone().resolve()?;
    let sub = |name: &str| out_dir.map(|d| d.join(name));
    let base = run_experiment(&with_transport(&cfg, Transport::Plaintext), sub("baseline").as_deref())?;
    let enc = run_experiment(&with_transport(&cfg, Transport::Encrypted), sub("encrypted").as_deref())?;

    let mode = |o: &super::ExperimentOutcome, transport| ModeResult {
        transport,
        final_accuracy: o.summary.final_accuracy.unwrap_or(f64::NAN),
        final_loss: o.summary.final_loss.unwrap_or(f64::NAN),
        accuracy_series: o.records.iter().map(|r| r.accuracy).collect(),
        loss_series: o.records.iter().map(|r| r.loss).collect(),
        final_weights_digest: o.summary.final_weights_digest.clone(),
    };
    let baseline = mode(&base, Transport::Plaintext);
    let encrypted = mode(&enc, Transport::Encrypted);

    let mut detail = Vec::new();
    if !base.final_weights.bitwise_eq(&enc.final_weights) {
        detail.push("final global weights differ".to_string());
    }
    if base.records.len() != enc.records.len() {
        detail.push(format!(
            "round counts differ: {} vs {}",
            base.records.len(),
            enc.records.len()
        ));
    }
    for (a, b) in base.records.iter().zip(&enc.records) {
        if a.without_security_fields() != b.without_security_fields() {
            detail.push(format!("round {} records differ", a.t));
        }
    }

    let report = ComparisonReport {
        delta_accuracy: encrypted.final_accuracy - baseline.final_accuracy,
        delta_loss: encrypted.final_loss - baseline.final_loss,
        parity: detail.is_empty(),
        parity_detail: detail,
        security: link_security(&with_transport(&cfg, Transport::Encrypted), &enc.records),
        config: cfg,
        baseline,
        encrypted,
    };
    if let Some(d) = out_dir {
        report.write(d)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{parse_config, Attack};

    #[test]
    fn renders_reference_numbers_in_table_layout() {
        let table = render_table(&[
            TableRow {
                label: "Baseline Model".into(),
                accuracy: 0.7777,
                loss: 5.0011,
            },
            TableRow {
                label: "Encrypted Model (After Decryption)".into(),
                accuracy: 0.7777,
                loss: 4.9535,
            },
        ]);
        let expected = "Comparison of Model Performance\n\n\
                        | Model | Accuracy | Loss |\n|---|---|---|\n\
                        | Baseline Model | 0.7777 | 5.0011 |\n\
                        | Encrypted Model (After Decryption) | 0.7777 | 4.9535 |\n";
        assert_eq!(table, expected);
    }

    #[test]
    fn small_comparison_has_exact_parity_and_link_metrics() {
        let cfg = parse_config(
            r#"{"num_clients": 3, "data": {"samples_per_class": 30, "image_size": [8, 8]},
                "training": {"rounds": 2, "epochs": 1},
                "attack": {"kind": "eavesdrop", "clients": [1], "eve_rate": 1.0}}"#,
        )
        .unwrap();
        let r = compare_baseline_encrypted(&cfg, None).unwrap();
        // The attacked client drops out of encrypted rounds only, so the
        // two runs diverge and the report must say so.
        assert!(!r.parity);
        assert!(r.render().starts_with("!!! PARITY VIOLATION"));
        assert_eq!(r.security[1].aborted_rounds, vec![0, 1]);

        let cfg = ExperimentConfig {
            attack: Attack::None,
            ..cfg
        };
        let r = compare_baseline_encrypted(&cfg, None).unwrap();
        assert!(r.parity, "{:?}", r.parity_detail);
        assert_eq!(r.delta_accuracy, 0.0);
        assert_eq!(r.delta_loss, 0.0);
        assert_eq!(r.baseline.loss_series, r.encrypted.loss_series);
        let expected = 1.0 - (-0.2f64).exp();
        assert!(r.security.iter().all(|l| (l.success_probability - expected).abs() < 1e-15));
        assert!(r.render().contains("parity: exact"));
    }
}
