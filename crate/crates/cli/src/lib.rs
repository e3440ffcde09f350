//! Command-line front end for `pam-core`.
//!
//! Every subcommand reads a flat [`Params`] set (TOML file plus flags),
//! runs one experiment and returns its artifacts as strings; the caller
//! decides where they go. Outputs depend only on the parameters, so the
//! same configuration and seed reproduce them byte for byte.

mod commands;
pub mod params;
mod verify;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use pam_core::Error;

pub use params::Params;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("invariant failure: {0}")]
    Invariant(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Budget(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::SizeBudget { .. } | Error::EnumerationTooLarge { .. } => CliError::Budget(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pam", version, about = "Parabolic Anderson model with random conductances")]
pub struct Cli {
    /// TOML file with default parameters; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write the main artifact here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a conductance field (CSV).
    GenField(Params),
    /// Search a field for a pocket near a conductance value.
    VerifyCluster(Params),
    /// Solve for u along one environment realization.
    SimulateU(Params),
    /// Monte Carlo annealed moments over a time grid.
    Moment(Params),
    /// Largest eigenvalue of a truncated variational operator.
    Variational(Params),
    /// Green function of the rate-2d walk at the origin.
    Green(Params),
    /// Quenched exponent over environment realizations.
    Quenched(Params),
    /// Numerical probe of one of the theorem statements.
    Probe(Params),
    /// Run the invariant suite.
    Verify(Params),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenField(_) => "gen-field",
            Command::VerifyCluster(_) => "verify-cluster",
            Command::SimulateU(_) => "simulate-u",
            Command::Moment(_) => "moment",
            Command::Variational(_) => "variational",
            Command::Green(_) => "green",
            Command::Quenched(_) => "quenched",
            Command::Probe(_) => "probe",
            Command::Verify(_) => "verify",
        }
    }

    fn params(&self) -> &Params {
        match self {
            Command::GenField(p)
            | Command::VerifyCluster(p)
            | Command::SimulateU(p)
            | Command::Moment(p)
            | Command::Variational(p)
            | Command::Green(p)
            | Command::Quenched(p)
            | Command::Probe(p)
            | Command::Verify(p) => p,
        }
    }
}

/// Artifacts of one run. `main` is the primary output; `files` are extra
/// artifacts requested through path parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub main: String,
    pub files: Vec<(PathBuf, String)>,
    /// Set when the run completed but an invariant or verdict failed.
    pub failure: Option<String>,
}

pub fn read_file(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })
}

/// Merge the config file under the flags and run the subcommand.
pub fn run(command: &Command, config: Option<&PathBuf>) -> Result<Output, CliError> {
    let file = match config {
        Some(path) => Params::from_toml(&read_file(path)?)?,
        None => Params::default(),
    };
    let params = command.params().clone().over(file);
    commands::dispatch(command.name(), &params)
}
