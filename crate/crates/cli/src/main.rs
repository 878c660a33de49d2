use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use cvis_core::harness::{mc_oracle, read_rows, run_experiment, trial_statistics};
use cvis_core::{Error, EstimatorKind, ExperimentConfig, RngStream};

#[derive(Parser)]
#[command(name = "cvis", version, about = "Bifidelity rare-event estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Worker threads; affects wall time only.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Crude Monte Carlo reference values for the configured benchmark.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10_000_000)]
        samples: u64,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSON result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Replicated trials; rows go to a CSV file, resuming if it exists.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's base_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's n_trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Append per-trial CVIS reports as JSON lines.
        #[arg(long)]
        reports: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate statistics of a trial CSV against a reference value.
    Stats {
        input: PathBuf,
        #[arg(long)]
        truth: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn set_threads(common: &Common) -> anyhow::Result<()> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::parse(&text)
}

fn emit(json: String, out: Option<&PathBuf>) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Oracle { config, samples, seed, out, common } => {
            set_threads(&common)?;
            let cfg = load(&config)?;
            let (pair, dist) = cfg.setup()?;
            let rng = RngStream::new(seed.unwrap_or(cfg.base_seed), 0);
            let res = mc_oracle(&pair, &dist, samples, &rng)?;
            emit(serde_json::to_string_pretty(&res)?, out.as_ref())
        }
        Command::Run { config, out, seed, trials, reports, common } => {
            set_threads(&common)?;
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            if let Some(t) = trials {
                cfg.n_trials = t;
            }
            let rows = run_experiment(&cfg, Some(&out), reports.as_deref())?;
            let failed = rows.iter().filter(|r| !r.is_ok()).count();
            eprintln!("{} rows written to {} ({failed} failed)", rows.len(), out.display());
            Ok(())
        }
        Command::Stats { input, truth, out } => {
            let rows = read_rows(&input)?;
            let mut table = serde_json::Map::new();
            for k in EstimatorKind::ALL {
                if rows.iter().any(|r| r.estimator == k) {
                    table.insert(k.to_string(), serde_json::to_value(trial_statistics(&rows, k, truth)?)?);
                }
            }
            if table.is_empty() {
                return Err(Error::InsufficientData(format!("{} holds no rows", input.display())).into());
            }
            emit(serde_json::to_string_pretty(&table)?, out.as_ref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(err) if err.is_config() => ExitCode::from(2),
                Some(Error::Io(_) | Error::Csv(_) | Error::Json(_)) => ExitCode::from(1),
                Some(_) => ExitCode::from(3),
                None => ExitCode::from(1),
            }
        }
    }
}
