//! `ecgl`: continual node-classification experiments from the command line.
//!
//! Subcommands: `run` (execute an experiment over one or more seeds),
//! `gen` (write a synthetic dataset file), `bench` (time the MLP-trained
//! engine against its GCN-trained ablation), `validate` (lint a dataset
//! file). Exit codes distinguish configuration (2), data (3), and numeric
//! (4) failures.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::ConfigOverrides;

/// Categorized command-line failure.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numeric error: {msg}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(name = "ecgl", version, about = "Continual node classification on growing graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a continual-learning experiment over the configured seeds.
    Run {
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Generate a synthetic dataset file.
    Gen {
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Compare training/inference time of the MLP-trained engine against
    /// its GCN-trained ablation on the same data and seed.
    Bench {
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Check a dataset file against every format and structure invariant.
    Validate {
        /// Dataset path.
        #[arg(long)]
        dataset: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { overrides } => {
            let config = overrides.resolve()?;
            commands::cmd_run(&config)
        }
        Command::Gen { out, overrides } => {
            let config = overrides.resolve()?;
            commands::cmd_gen(&config, &out)
        }
        Command::Bench { overrides } => {
            let config = overrides.resolve()?;
            commands::cmd_bench(&config).map(|_| ())
        }
        Command::Validate { dataset } => commands::cmd_validate(&dataset),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code())
        }
    }
}
