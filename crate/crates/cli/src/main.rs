use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qfl_core::experiment::{
    compare_baseline_encrypted, exit_code, parse_config, parse_config_file, run_experiment, run_probe,
    ExperimentConfig, ProbeConfig, EXIT_CONFIG, EXIT_OK,
};
use qfl_core::federation::Transport;
use qfl_core::Error;

#[derive(Parser)]
#[command(name = "qfl", version, about = "Federated learning with QKD-keyed weight transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one federation and write metrics.
    Run(RunArgs),
    /// Train under plaintext and encrypted transport and compare.
    Compare(RunArgs),
    /// Sweep standalone BB84 sessions over attenuation, distance and eavesdropping.
    QkdProbe(ProbeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Plaintext,
    Encrypted,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON). Omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the transport (ignored by `compare`, which runs both).
    #[arg(long, value_enum)]
    transport: Option<TransportArg>,
    /// Output directory for metrics files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop at the first failed round.
    #[arg(long)]
    fail_fast: bool,
}

#[derive(Args)]
struct ProbeArgs {
    /// Probe grid (JSON); flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    eve_rates: Option<Vec<f64>>,
    #[arg(long)]
    n_qubits: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Writes probe.json here instead of only printing.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_experiment(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(p) => parse_config_file(p)?,
        None => parse_config("{}")?,
    };
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(t) = args.transport {
        cfg.transport = match t {
            TransportArg::Plaintext => Transport::Plaintext,
            TransportArg::Encrypted => Transport::Encrypted,
        };
    }
    cfg.fail_fast |= args.fail_fast;
    cfg.resolve()
}

fn cmd_run(args: &RunArgs) -> Result<i32, Error> {
    let cfg = load_experiment(args)?;
    let out = run_experiment(&cfg, args.out.as_deref())?;
    for r in &out.records {
        let aborted: Vec<usize> = r.clients.iter().filter(|c| c.aborted).map(|c| c.client_id).collect();
        println!(
            "round {:>3}  acc {:.4}  loss {:.4}  clients {}  aborted {:?}{}",
            r.t,
            r.accuracy,
            r.loss,
            r.included_clients,
            aborted,
            r.failure.as_deref().map(|f| format!("  FAILED: {f}")).unwrap_or_default()
        );
    }
    println!("{}", serde_json::to_string(&out.summary.stop).map_err(Error::from)?);
    Ok(out.exit_status())
}

fn cmd_compare(args: &RunArgs) -> Result<i32, Error> {
    let cfg = load_experiment(args)?;
    let report = compare_baseline_encrypted(&cfg, args.out.as_deref())?;
    print!("{}", report.render());
    Ok(if report.parity { EXIT_OK } else { 1 })
}

fn cmd_probe(args: &ProbeArgs) -> Result<i32, Error> {
    let mut cfg: ProbeConfig = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.display().to_string(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("probe config: {e}")))?
        }
        None => ProbeConfig::default(),
    };
    if let Some(v) = &args.gammas {
        cfg.gammas = v.clone();
    }
    if let Some(v) = &args.lengths {
        cfg.lengths_km = v.clone();
    }
    if let Some(v) = &args.eve_rates {
        cfg.eve_rates = v.clone();
    }
    if let Some(v) = args.n_qubits {
        cfg.n_qubits = v;
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let rows = run_probe(&cfg)?;
    println!("gamma\tL_km\teve\tP_success\treceived\tsifted\tqber\tabort_rate");
    for r in &rows {
        let qber = r.mean_qber.map_or_else(|| "-".into(), |q| format!("{q:.4}"));
        println!(
            "{}\t{}\t{}\t{:.6}\t{:.4}\t{:.4}\t{}\t{:.2}",
            r.gamma, r.length_km, r.eve_rate, r.success_probability, r.mean_received_fraction, r.mean_sifted_fraction,
            qber, r.abort_rate
        );
    }
    if let Some(dir) = &args.out {
        write_probe(dir, &serde_json::json!({ "config": cfg, "rows": rows }))?;
    }
    Ok(EXIT_OK)
}

fn write_probe(dir: &Path, value: &serde_json::Value) -> Result<(), Error> {
    let io = |e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    let path = dir.join("probe.json");
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::QkdProbe(a) => cmd_probe(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
