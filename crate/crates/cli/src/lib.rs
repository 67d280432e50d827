//! Subcommands behind the `tvcure` binary.

pub mod artifact;
pub mod commands;
pub mod config;

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use thiserror::Error;

use tvcure::{DataError, EstimationError, SimulationError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("the fit stopped after {outer} outer iterations without converging; artifacts were written to {out}")]
    NotConverged { outer: usize, out: PathBuf },
    #[error("{failed} of {total} replicates failed or did not converge")]
    TooManyFailures { failed: usize, total: usize },
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    /// 1 for bad input, 2 for numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Estimation(e) if e.is_numerical() => 2,
            CliError::NotConverged { .. } | CliError::TooManyFailures { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tvcure", version, about = "Promotion-time cure models with time-varying covariates")]
pub struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a person-period CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one simulated person-period CSV.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the simulation study and write summary tables.
    Replicate {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; all cores by default.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Hazard and survival along a covariate path.
    Predict {
        /// Fit artifact written by `fit`.
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        path: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { data, spec, out } => commands::fit(&data, &spec, &out),
        Command::Simulate { scenario, out, seed } => commands::simulate(&scenario, &out, seed),
        Command::Replicate {
            scenario,
            out,
            seed,
            threads,
        } => commands::replicate(&scenario, &out, seed, threads),
        Command::Predict { fit, path, out } => commands::predict(&fit, &path, &out),
    }
}
