//! `mvi`: test whether the clusterings of two data views are independent.

mod commands;
mod config;
mod error;
mod io;
mod json;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "mvi", version, about = "Independence tests for clusterings of two data views")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "MVI_THREADS")]
    threads: Option<usize>,

    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pseudo likelihood ratio test on two CSV views, plus baselines.
    Test(commands::test::TestArgs),
    /// Fit a Gaussian mixture to one CSV view.
    Fit(commands::fit::FitArgs),
    /// Generate a two-view dataset from a catalog design.
    Simulate(commands::simulate::SimulateArgs),
    /// Monte Carlo power study over a grid of designs.
    Power(commands::power::PowerArgs),
    /// Split a power table into one series file per (sigma, n) panel.
    PlotData(commands::plot_data::PlotDataArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Invalid("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    let cfg = config::RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Test(a) => commands::test::run(&a, cfg.test),
        Command::Fit(a) => commands::fit::run(&a, cfg.fit),
        Command::Simulate(a) => commands::simulate::run(&a, cfg.simulate),
        Command::Power(a) => commands::power::run(&a, cfg.power),
        Command::PlotData(a) => commands::plot_data::run(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
