//! `sensan`: batch front-end for sensitivity experiments.
//!
//! Exit codes: 0 on success, 2 on a configuration error, 1 on a computation error.

mod commands;
mod config;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use commands::{Common, SurfaceArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot write output {0}")]
    Output(String),
    #[error(transparent)]
    Compute(#[from] sensan_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Output(_) | CliError::Compute(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "sensan", version, about = "Sensitivity of statistical functionals under information and policy metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Nodes per grid axis (overrides the config).
    #[arg(long)]
    grid: Option<usize>,
}

impl CommonArgs {
    fn common(&self) -> Common<'_> {
        Common { config: self.config.as_deref(), out: &self.out, seed: self.seed, grid: self.grid }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sensitivity and sufficiency of psi to nu under one or more metrics.
    Sensitivity(CommonArgs),
    /// Counterfactual densities shifting nu by a target increment.
    Counterfactual(CommonArgs),
    /// GMM estimand, influence functions and efficient variance.
    Gmm(CommonArgs),
    /// Parameter-to-parameter sensitivity on a two-dimensional chart.
    Surface {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write report.json here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// sphere, flat or hyperbolic.
        #[arg(long)]
        chart: Option<String>,
        #[arg(long, num_args = 2, value_names = ["U", "V"], allow_negative_numbers = true)]
        point: Option<Vec<f64>>,
        /// Expression in u and v.
        #[arg(long)]
        psi: Option<String>,
        /// Expression in u and v.
        #[arg(long)]
        nu: Option<String>,
    },
    /// Monte Carlo consistency or joint-asymptotics run.
    Mc(CommonArgs),
    /// Schooling example: four metrics, counterfactuals, curves and table.
    ReplicateEducation(CommonArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Sensitivity(a) => commands::sensitivity(&a.common()),
        Command::Counterfactual(a) => commands::counterfactual(&a.common()),
        Command::Gmm(a) => commands::gmm(&a.common()),
        Command::Mc(a) => commands::mc(&a.common()),
        Command::ReplicateEducation(a) => commands::replicate(&a.common()),
        Command::Surface { config, out, chart, point, psi, nu } => commands::surface(
            config.as_deref(),
            &SurfaceArgs {
                chart: chart.as_deref(),
                point: point.as_ref().map(|p| [p[0], p[1]]),
                psi: psi.as_deref(),
                nu: nu.as_deref(),
                out: out.as_deref(),
            },
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sensan: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
