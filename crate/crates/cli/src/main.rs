//! `bea-lab`: runs optimizer and modified-flow experiments from config files.
//!
//! Exit codes: 0 success, 1 config or precondition error, 2 numeric blow-up,
//! 3 validation failure.

// Negated comparisons are how parameter checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Config, Kind};

#[derive(Debug, Parser)]
#[command(
    name = "bea-lab",
    version,
    about = "Adaptive-optimizer modified-flow experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Io {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Discrete trajectories, optionally with a modified flow, and a plane plot.
    Run(Io),
    /// Error against step size for the leading and first-order flows.
    OrderStudy(Io),
    /// Implicit bias and perturbed one-norm along a run.
    BiasPlot(Io),
    /// The implicit penalty as a function of one gradient component.
    PenaltyCurve(Io),
    /// Large-eps Adam against heavy-ball momentum.
    HeavyBallLimit(Io),
    /// Explicit global error bound against the observed error.
    BoundCheck(Io),
    /// Finite-difference checks of the loss derivatives.
    Validate(Io),
}

impl Command {
    fn split(self) -> (Kind, Io) {
        match self {
            Command::Run(io) => (Kind::Run, io),
            Command::OrderStudy(io) => (Kind::OrderStudy, io),
            Command::BiasPlot(io) => (Kind::BiasPlot, io),
            Command::PenaltyCurve(io) => (Kind::PenaltyCurve, io),
            Command::HeavyBallLimit(io) => (Kind::HeavyBallLimit, io),
            Command::BoundCheck(io) => (Kind::BoundCheck, io),
            Command::Validate(io) => (Kind::Validate, io),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap reserves 2 for usage errors; here 2 means blow-up
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let (kind, io) = cli.command.split();
    let result = Config::load(&io.config, kind, io.out).and_then(|cfg| commands::dispatch(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bea-lab: {e}");
            e.exit_code()
        }
    }
}
