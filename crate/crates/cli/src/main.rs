//! `driftlab` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure (or a failed acceptance run),
//! 2 invalid input, 3 an estimator that did not converge (its result file is
//! still written).

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use driftlab::parallel;

use settings::Settings;

#[derive(Parser)]
#[command(name = "driftlab", version, about = "Simulate, fit, filter and check SDE models")]
struct Cli {
    /// Key–value configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a path on a uniform grid and write it as CSV.
    Simulate(Settings),
    /// Estimate parameters from exact observations (mle, ee, bridge-mle) or
    /// profile a particle likelihood over a grid (pf).
    Fit(Settings),
    /// Run the particle filter on noisy observations.
    Filter(Settings),
    /// Penalized spline fit of the trajectory and drift parameters.
    Collocate(Settings),
    /// Compare data with synthetic replicates from a fitted model.
    Diagnose(Settings),
    /// Run the acceptance suite.
    Accept(AcceptArgs),
}

#[derive(Args)]
struct AcceptArgs {
    #[command(flatten)]
    settings: Settings,
    /// Comma-separated criterion numbers to run (default: all).
    #[arg(long, value_delimiter = ',')]
    only: Vec<u32>,
}

/// Input or configuration problem; maps to exit code 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

/// How a command that ran to completion ended.
pub enum Status {
    Done,
    NotConverged,
    Failed,
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    let threads = parallel::configured_threads().map_err(|e| Invalid(e.to_string()))?;
    let config = cli.config.as_deref();
    parallel::with_threads(threads, move || match cli.command {
        Command::Simulate(s) => commands::simulate(&settings::load(config, "simulate", &s)?),
        Command::Fit(s) => commands::fit(&settings::load(config, "fit", &s)?),
        Command::Filter(s) => commands::filter(&settings::load(config, "filter", &s)?),
        Command::Collocate(s) => commands::collocate(&settings::load(config, "collocate", &s)?),
        Command::Diagnose(s) => commands::diagnose(&settings::load(config, "diagnose", &s)?),
        Command::Accept(a) => commands::accept(&settings::load(config, "accept", &a.settings)?, a.only),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            eprintln!("warning: estimator did not converge");
            ExitCode::from(3)
        }
        Ok(Status::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
