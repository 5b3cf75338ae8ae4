//! `pulseopt` batch front-end: reads a JSON config per subcommand and writes
//! CSV/JSON artifacts into the output directory.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{load, CliError, CliResult};

#[derive(Parser)]
#[command(name = "pulseopt", version, about = "Optimal pulse sequences under correlated noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel sections.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Optimise every length in a range; writes the sweep table and sequences.
    Optimize,
    /// First-order infidelity and weak-noise report for one sequence.
    Evaluate,
    /// Analytic vs Monte Carlo infidelity.
    Simulate,
    /// Optimal sequence vs SK1/BB1 over an ARMA(1,1) grid.
    CompareCp,
    /// Infidelity increase under model mismatch.
    SweepRobustness,
    /// Power spectral density of an ARMA model.
    Spectrum,
    /// Filter-function magnitudes of a sequence.
    FilterFunction,
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.into())
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let path: &Path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Optimize => commands::optimize(load(path)?, out),
        Command::Evaluate => commands::evaluate(load(path)?, out),
        Command::Simulate => {
            let mut cfg: config::SimulateConfig = load(path)?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            commands::simulate(cfg, out)
        }
        Command::CompareCp => commands::compare_cp(load(path)?, out),
        Command::SweepRobustness => {
            let mut cfg: config::RobustnessConfig = load(path)?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            commands::sweep_robustness(cfg, out)
        }
        Command::Spectrum => commands::spectrum(load(path)?, out),
        Command::FilterFunction => commands::filter_function(load(path)?, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pulseopt: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
