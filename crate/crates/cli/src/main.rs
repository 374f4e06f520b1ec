//! `rsma`: runs the experiment protocols and writes CSV plus a JSON sidecar.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rsma::config::ConfigFile;
use rsma::experiments::{self, EsrSweep};
use rsma::{CsitQuality, ExperimentKind, ExperimentSpec, Result, SchemeKind, SystemConfig};

#[derive(Parser, Debug)]
#[command(name = "rsma", version, about = "Rate-splitting precoder experiments for MIMO broadcast channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Weighted ergodic rate pairs over the weight schedule (two users).
    RateRegion(Common),
    /// Ergodic sum rate against SNR with fitted high-SNR slopes.
    EsrSweep(Common),
    /// Closed-form sum-DoF per scheme.
    Dof(Common),
    /// Link-level throughput against the Shannon bound.
    Lls(Common),
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML system configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// A single value or an inclusive grid `start:stop:step`.
    #[arg(long = "snr-db", value_parser = parse_snr_grid)]
    snr_db: Option<SnrGrid>,
    /// Schemes to run; repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    scheme: Vec<SchemeKind>,
    /// Common-stream counts for rate splitting; repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    qc: Vec<usize>,
    /// CSIT quality exponent or `perfect`.
    #[arg(long)]
    alpha: Option<CsitQuality>,
    #[arg(long = "tx-antennas")]
    tx_antennas: Option<usize>,
    #[arg(long = "rx-antennas")]
    rx_antennas: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    /// Channel realizations L.
    #[arg(long)]
    realizations: Option<usize>,
    /// Error samples per realization N.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// L = 100, N = 1000 unless given explicitly.
    #[arg(long = "full-scale")]
    full_scale: bool,
    /// Output CSV; the sidecar goes next to it with a `.json` extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
struct SnrGrid(Vec<f64>);

fn parse_snr_grid(s: &str) -> std::result::Result<SnrGrid, String> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("'{p}' is not a number")))
        .collect::<std::result::Result<_, _>>()?;
    let grid = match parts[..] {
        [v] => vec![v],
        [a, b, step] => {
            if !(step > 0.0) || b < a {
                return Err("expected start <= stop and step > 0".into());
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| a + i as f64 * step).collect()
        }
        _ => return Err("expected a value or start:stop:step".into()),
    };
    if grid.iter().any(|v| !v.is_finite()) {
        return Err("SNR values must be finite".into());
    }
    Ok(SnrGrid(grid))
}

fn load_config(args: &Common) -> Result<(SystemConfig, bool)> {
    let mut file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            ConfigFile::from_toml_str(&text)?
        }
        None => ConfigFile::default(),
    };
    let samples_given = file.samples.is_some();
    if let Some(m) = args.tx_antennas {
        file.tx_antennas = Some(m);
    }
    if let Some(q) = args.rx_antennas {
        file.rx_antennas = Some(q);
    }
    if let Some(k) = args.users {
        file.users = Some(k);
    }
    if let Some(a) = args.alpha {
        file.alpha = Some(a);
    }
    if let Some(&qc) = args.qc.first() {
        file.common_streams = Some(qc);
    }
    if let Some(seed) = args.seed {
        file.seed = Some(seed);
    }
    if let Some(grid) = &args.snr_db {
        if file.power.is_none() {
            file.snr_db = Some(grid.0[0]);
        }
    }
    Ok((file.resolve()?, samples_given))
}

fn build_spec(kind: ExperimentKind, args: &Common) -> Result<ExperimentSpec> {
    let (config, samples_in_file) = load_config(args)?;
    let file_samples = config.samples;
    let mut spec = ExperimentSpec::desk(kind, config);
    if args.full_scale {
        spec = spec.full_scale();
    }
    if samples_in_file {
        spec.config.samples = file_samples;
    }
    if let Some(n) = args.samples {
        spec.config.samples = n;
    }
    if let Some(l) = args.realizations {
        spec.realizations = l;
    }
    if let Some(grid) = &args.snr_db {
        spec.snr_db = grid.0.clone();
    }
    if !args.scheme.is_empty() {
        spec.schemes = args.scheme.clone();
    }
    if !args.qc.is_empty() {
        spec.common_streams = args.qc.clone();
    }
    spec.validate()?;
    Ok(spec)
}

fn default_out(kind: ExperimentKind) -> PathBuf {
    PathBuf::from(match kind {
        ExperimentKind::RateRegion => "rate_region.csv",
        ExperimentKind::EsrSweep => "esr_sweep.csv",
        ExperimentKind::DofTable => "dof.csv",
        ExperimentKind::LlsSweep => "lls.csv",
    })
}

fn run(cli: Cli) -> Result<()> {
    let (kind, args) = match cli.command {
        Command::RateRegion(a) => (ExperimentKind::RateRegion, a),
        Command::EsrSweep(a) => (ExperimentKind::EsrSweep, a),
        Command::Dof(a) => (ExperimentKind::DofTable, a),
        Command::Lls(a) => (ExperimentKind::LlsSweep, a),
    };
    let spec = build_spec(kind, &args)?;
    let out = args.out.clone().unwrap_or_else(|| default_out(kind));
    log::info!("running {kind:?}: L = {}, N = {}, SNR {:?} dB", spec.realizations, spec.config.samples, spec.snr_db);
    let rows = match kind {
        ExperimentKind::RateRegion => {
            let rows = experiments::rate_region(&spec)?;
            experiments::write_csv(&out, &rows)?;
            rows.len()
        }
        ExperimentKind::EsrSweep => {
            let EsrSweep { rows, slopes } = experiments::esr_sweep(&spec)?;
            experiments::write_csv(&out, &rows)?;
            for (tag, slope) in slopes {
                match slope {
                    Some(s) => println!("slope {} qc={} {s:.4}", tag.scheme, tag.qc),
                    None => println!("slope {} qc={} n/a", tag.scheme, tag.qc),
                }
            }
            rows.len()
        }
        ExperimentKind::DofTable => {
            let rows = experiments::dof_table(&spec)?;
            experiments::write_csv(&out, &rows)?;
            for r in &rows {
                println!("dof {} qc={} {:.4}", r.scheme, r.qc, r.dof);
            }
            rows.len()
        }
        ExperimentKind::LlsSweep => {
            let rows = experiments::lls_sweep(&spec)?;
            experiments::write_csv(&out, &rows)?;
            rows.len()
        }
    };
    experiments::write_sidecar(&out, &spec)?;
    println!("wrote {rows} rows to {}", out.display());
    Ok(())
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::from(1)
        }
    }
}
