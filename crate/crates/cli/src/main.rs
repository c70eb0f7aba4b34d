//! `dcs`: Monte-Carlo runs of overlapping and non-overlapping cooperative
//! sensing. A JSON config describes the experiment; flags override it.

use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use dcs_core::experiment::{run_experiment_with_snapshots, write_rows};
use dcs_core::{emit, Algorithm, Criterion, ExperimentConfig, OutputFormat};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CriterionArg {
    /// Minimize missed detection plus false alarm.
    Sum,
    /// Minimize missed detection with false alarm capped at alpha.
    Constrained,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Ocf,
    Cf,
    Local,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(version, about = "Distributed cooperative spectrum sensing simulator")]
struct Cli {
    /// Experiment config (JSON). Omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of SUs.
    #[arg(long)]
    n_su: Option<usize>,
    /// Reporting power budget per SU, dBm.
    #[arg(long, allow_negative_numbers = true)]
    power_dbm: Option<f64>,
    /// Slot budget per SU.
    #[arg(long)]
    theta_su: Option<u32>,
    #[arg(long, value_enum)]
    criterion: Option<CriterionArg>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    /// Independent runs per sweep point.
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed; run r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format; inferred from the --out extension, else csv.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Write the final structure of the first run of each sweep point here.
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            ExperimentConfig::from_json(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(n) = cli.n_su {
        cfg.network.n_su = n;
    }
    if let Some(dbm) = cli.power_dbm {
        if !dbm.is_finite() {
            bail!("--power-dbm must be finite");
        }
        cfg.network.p_su_w = dbm_to_w(dbm);
    }
    if let Some(t) = cli.theta_su {
        cfg.network.theta_su = t;
    }
    if let Some(c) = cli.criterion {
        cfg.criterion = match c {
            CriterionArg::Sum => Criterion::SumError,
            CriterionArg::Constrained => Criterion::ConstrainedMiss,
        };
    }
    if let Some(a) = cli.algorithm {
        cfg.algorithm = match a {
            AlgorithmArg::Ocf => Algorithm::Ocf,
            AlgorithmArg::Cf => Algorithm::Cf,
            AlgorithmArg::Local => Algorithm::Local,
        };
    }
    if let Some(r) = cli.runs {
        cfg.runs = r;
    }
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_format(cli: &Cli) -> OutputFormat {
    match cli.format {
        Some(FormatArg::Csv) => OutputFormat::Csv,
        Some(FormatArg::Json) => OutputFormat::Json,
        None => match cli.out.as_deref().and_then(Path::extension) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => OutputFormat::Json,
            _ => OutputFormat::Csv,
        },
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = build_config(&cli)?;
    let format = output_format(&cli);

    let (rows, snapshots) = run_experiment_with_snapshots(&cfg)?;
    log::info!("{} rows from {} runs", rows.len(), cfg.runs);

    match &cli.out {
        Some(path) => {
            emit(&rows, format, path).with_context(|| format!("writing {}", path.display()))?
        }
        None => write_rows(&rows, format, BufWriter::new(io::stdout().lock()))?,
    }
    if let Some(path) = &cli.snapshot {
        let text = serde_json::to_string_pretty(&snapshots)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
