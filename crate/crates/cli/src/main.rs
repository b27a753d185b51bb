//! `wcs-sim`: run experiments, sweeps and self-checks.
//!
//! Exit codes: 0 success, 1 a check or computation failed, 2 invalid
//! configuration or arguments, 3 I/O failure, 4 checks inconclusive.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use wcs_core::config::ExperimentConfig;
use wcs_core::output::{self, RunManifest, RunStatus};
use wcs_core::par::Execution;
use wcs_core::sim::run_experiment;
use wcs_core::sweep::{run_sweep, summarize};
use wcs_core::validate::{self, Status, ValidateOptions};
use wcs_core::Error;

const EXIT_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_INCONCLUSIVE: u8 = 4;

#[derive(Parser)]
#[command(name = "wcs-sim", version, about = "Self-triggered control over a flooding wireless network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write states.csv, rounds.csv and summary.json.
    Run {
        /// TOML configuration; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `[sim] seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every (delta, seed) pair and write sweep.csv and sweep_summary.csv.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',', required = true)]
        deltas: Vec<f64>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_values_t = [42u64, 43, 44])]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Run experiments one after another on this thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Monte Carlo trigger oracle, DARE residual and flood-rate checks.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Rollouts per oracle case and floods for the rate check.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Scale the synthesized gain by 1 + EPS before checking it.
        #[arg(long, num_args = 0..=1, default_missing_value = "0.05", value_name = "EPS")]
        perturb_gain: Option<f64>,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Print the built-in configuration as TOML.
    DefaultConfig,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Argument(_) => EXIT_CONFIG,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_FAILED,
    }
}

fn load(path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", p.display())),
            other => other,
        }),
    }
}

fn cmd_run(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<u8, Error> {
    let mut cfg = load(config)?;
    if let Some(s) = seed {
        cfg.sim.seed = s;
    }
    cfg.validate()?;
    let start = Instant::now();
    let mut manifest = RunManifest::new("run", &cfg, out, vec![cfg.sim.seed], vec![cfg.trigger.delta]);
    manifest.write()?;
    match run_experiment(&cfg) {
        Ok((trace, summary)) => {
            let files = output::write_run(out, &trace, &summary)?;
            manifest.finish(RunStatus::Complete, files, start.elapsed().as_secs_f64())?;
            println!("{}", output::summary_json(&summary).trim_end());
            Ok(0)
        }
        Err(e) => {
            manifest.finish(RunStatus::Failed, Vec::new(), start.elapsed().as_secs_f64())?;
            Err(e)
        }
    }
}

fn cmd_sweep(config: Option<&Path>, deltas: &[f64], seeds: &[u64], out: &Path, sequential: bool) -> Result<u8, Error> {
    let cfg = load(config)?;
    cfg.validate()?;
    let exec = if sequential { Execution::Sequential } else { Execution::available() };
    let start = Instant::now();
    let mut manifest = RunManifest::new("sweep", &cfg, out, seeds.to_vec(), deltas.to_vec());
    manifest.write()?;
    match run_sweep(&cfg, deltas, seeds, exec) {
        Ok(rows) => {
            let summary = summarize(&rows);
            let files = output::write_sweep(out, &rows, &summary)?;
            manifest.finish(RunStatus::Complete, files, start.elapsed().as_secs_f64())?;
            print!("{}", output::sweep_summary_csv(&summary));
            Ok(0)
        }
        Err(e) => {
            manifest.finish(RunStatus::Failed, Vec::new(), start.elapsed().as_secs_f64())?;
            Err(e)
        }
    }
}

fn cmd_validate(config: Option<&Path>, samples: usize, perturb_gain: Option<f64>, seed: u64) -> Result<u8, Error> {
    let cfg = load(config)?;
    let opts = ValidateOptions {
        samples,
        perturb_gain,
        seed,
        exec: Execution::available(),
    };
    let reports = validate::run_all(&cfg, &opts)?;
    let mut overall = Status::Pass;
    for r in &reports {
        println!("{r}");
        overall = overall.combine(r.status);
    }
    println!("overall        {overall}");
    Ok(match overall {
        Status::Pass => 0,
        Status::Fail => EXIT_FAILED,
        Status::Inconclusive => EXIT_INCONCLUSIVE,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, seed, out } => cmd_run(config.as_deref(), *seed, out),
        Command::Sweep {
            config,
            deltas,
            seeds,
            out,
            sequential,
        } => cmd_sweep(config.as_deref(), deltas, seeds, out, *sequential),
        Command::Validate {
            config,
            samples,
            perturb_gain,
            seed,
        } => cmd_validate(config.as_deref(), *samples, *perturb_gain, *seed),
        Command::DefaultConfig => {
            print!("{}", ExperimentConfig::default().to_toml_string());
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
