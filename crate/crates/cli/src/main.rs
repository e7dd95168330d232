//! `boilerctl`: generate plant telemetry, train predictors, sweep the
//! compensation window, solve QPs, benchmark optimizers and run the closed
//! loop, each into one run directory with a manifest.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const CONFIG: u8 = 2;
    pub const DATA: u8 = 3;
    pub const SOLVER: u8 = 4;
    pub const IO: u8 = 1;

    pub fn config(message: String) -> Self {
        Self { code: Self::CONFIG, message }
    }

    pub fn data(message: String) -> Self {
        Self { code: Self::DATA, message }
    }

    pub fn solver(message: String) -> Self {
        Self { code: Self::SOLVER, message }
    }

    pub fn io(message: String) -> Self {
        Self { code: Self::IO, message }
    }
}

impl From<boiler_core::Error> for CliError {
    fn from(e: boiler_core::Error) -> Self {
        use boiler_core::Error as E;
        let code = match e {
            E::Config(_) => Self::CONFIG,
            E::Solver(_) | E::NotSymmetric(_) => Self::SOLVER,
            E::Io(_) => Self::IO,
            _ => Self::DATA,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "boilerctl", version, about = "Boiler combustion optimization pipeline")]
struct Cli {
    /// TOML run config; the shipped default is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Log the synthetic plant under the random-walk operator to data.csv.
    Generate {
        /// Overrides `plant.steps`.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Fit the eight SVR models; writes bundle.json and an accuracy table.
    Train {
        /// Telemetry CSV (default: <out>/data.csv).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also score data types A, B and C on the test split.
        #[arg(long)]
        sweep_layouts: bool,
    },
    /// Validation MSE change per compensation window size.
    SweepCompensation {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model bundle (default: <out>/bundle.json).
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Solve one QP in the text format; writes solution.json.
    QpSolve { file: PathBuf },
    /// Interior point vs DE/PSO/GA on control QPs sampled from the plant.
    BenchOptimizers {
        /// Overrides `bench.problems`.
        #[arg(long)]
        problems: Option<usize>,
    },
    /// Run the closed loop on the plant with `loop.eval_seed` and score it
    /// against that plant's random-walk log.
    Simulate {
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Overrides `loop.horizon`.
        #[arg(long)]
        horizon: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    match &cli.command {
        Command::Generate { steps: Some(s) } => cfg.plant.steps = *s,
        Command::BenchOptimizers { problems: Some(p) } => cfg.bench.problems = *p,
        Command::Simulate { horizon: Some(h), .. } => cfg.control.horizon = *h,
        _ => {}
    }
    cfg.validate()?;
    match &cli.command {
        Command::Generate { .. } => commands::generate(&cfg),
        Command::Train { data, sweep_layouts } => commands::train(&cfg, data.as_deref(), *sweep_layouts),
        Command::SweepCompensation { data, bundle } => {
            commands::sweep_compensation(&cfg, data.as_deref(), bundle.as_deref())
        }
        Command::QpSolve { file } => commands::qp_solve(&cfg, file),
        Command::BenchOptimizers { .. } => commands::bench_optimizers(&cfg),
        Command::Simulate { bundle, .. } => commands::simulate(&cfg, bundle.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
