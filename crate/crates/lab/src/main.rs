//! Command-line front end: one subcommand per experiment kind plus an
//! audit mode that recomputes persisted metrics from trajectories.
//!
//! Exit codes: 0 on success, 2 for configuration problems, 3 for
//! numerical failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stein_lab::config::ExperimentConfig;
use stein_lab::{runner, LabError};

#[derive(Parser)]
#[command(name = "stein-lab", version, about = "particle and mean-field experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, clap::Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps (default 1; results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one particle trajectory and record a norm series.
    Simulate(RunArgs),
    /// Sample-size sweep with stability certificates and departure times.
    StabilitySweep(RunArgs),
    /// Time/size schedule sweep measuring transport distance to the target.
    ConvergenceSweep(RunArgs),
    /// One-dimensional mean-field equation with entropy diagnostics.
    Pde1d(RunArgs),
    /// Probe the model's structural assumptions and record verdicts.
    CheckAssumptions(RunArgs),
    /// Distance between two measures stored as CSV files.
    Metric(RunArgs),
    /// Recompute a simulate run's metrics from its persisted trajectory.
    Audit(RunArgs),
}

impl Command {
    fn args(&self) -> &RunArgs {
        match self {
            Command::Simulate(a)
            | Command::StabilitySweep(a)
            | Command::ConvergenceSweep(a)
            | Command::Pde1d(a)
            | Command::CheckAssumptions(a)
            | Command::Metric(a)
            | Command::Audit(a) => a,
        }
    }

    /// The config `kind` this subcommand operates on.
    fn expected_kind(&self) -> &'static str {
        match self {
            Command::Simulate(_) | Command::Audit(_) => "simulate",
            Command::StabilitySweep(_) => "stability-sweep",
            Command::ConvergenceSweep(_) => "convergence-sweep",
            Command::Pde1d(_) => "pde1d",
            Command::CheckAssumptions(_) => "check-assumptions",
            Command::Metric(_) => "metric",
        }
    }
}

fn run(cli: &Cli) -> Result<String, LabError> {
    let args = cli.command.args();
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.kind != cli.command.expected_kind() {
        return Err(LabError::Config(format!(
            "config kind '{}' does not match this subcommand (expected '{}')",
            cfg.kind,
            cli.command.expected_kind(),
        )));
    }
    let base = args
        .config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.out_dir));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(1))
        .build()
        .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Simulate(_) => {
            if cfg.bayes.is_some() {
                runner::run_bayes_demo(&cfg, &base, &out)
            } else {
                runner::run_simulate(&cfg, &out)
            }
        }
        Command::StabilitySweep(_) => runner::run_stability_sweep(&cfg, &out),
        Command::ConvergenceSweep(_) => runner::run_convergence_sweep(&cfg, &out),
        Command::Pde1d(_) => runner::run_pde1d(&cfg, &out),
        Command::CheckAssumptions(_) => runner::run_check_assumptions(&cfg, &out),
        Command::Metric(_) => runner::run_metric(&cfg, &base, &out),
        Command::Audit(_) => runner::run_audit(&cfg, &out),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
