//! `minshap`: Shapley-based feature selection on CSV data, simulation and benchmarks.

mod commands;
mod config;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use config::Opts;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] minshap::Error),
}

impl CliError {
    /// 2 config error, 3 data error, 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        use minshap::ErrorClass;
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "minshap",
    version,
    about = "Permutation Shapley feature selection with MinShap, Max-p and partial-conjunction tests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the tests on a CSV and write a JSON selection report
    Select(Opts),
    /// Write the raw VI matrix CSV and mean/min statistics without testing
    Shapley(Opts),
    /// Write a simulated dataset CSV and its true support
    Simulate(Opts),
    /// Run the simulation benchmark and write summary CSV and JSON
    Bench(Opts),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (name, opts) = match cli.command {
        Command::Select(o) => ("select", o),
        Command::Shapley(o) => ("shapley", o),
        Command::Simulate(o) => ("simulate", o),
        Command::Bench(o) => ("bench", o),
    };
    match opts.resolve().and_then(|o| commands::run(name, o)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("minshap {name}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
