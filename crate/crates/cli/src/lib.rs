//! Command-line front end of the road-marking simulator: headless runs,
//! controller benchmarks, replay, CSV export and the served vehicle with its
//! browser bridge.

pub mod commands;
pub mod http;
pub mod operator;
pub mod serve;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use roadmark::mission::MissionError;
use roadmark::qa::LogError;
use roadmark::scenario::ScenarioError;

pub use serve::{ServeConfig, ServeError, Server};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ROADMARK_OUT_DIR";
/// Output directory when neither `--out` nor the environment names one.
pub const DEFAULT_OUT_DIR: &str = "roadmark-out";

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    /// A fault was raised or QA fell below the threshold.
    MissionFailed = 1,
    /// Bad arguments, malformed scenario or log.
    Usage = 2,
    Io = 3,
    /// Replay did not reproduce the log.
    Divergence = 4,
}

impl ExitStatus {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error(transparent)]
    Operator(#[from] operator::ClientError),
    #[error("{0}")]
    Usage(String),
}

fn scenario_status(e: &ScenarioError) -> ExitStatus {
    match e {
        ScenarioError::Io { .. } => ExitStatus::Io,
        _ => ExitStatus::Usage,
    }
}

fn log_status(e: &LogError) -> ExitStatus {
    match e {
        LogError::Io(_) => ExitStatus::Io,
        _ => ExitStatus::Usage,
    }
}

fn mission_status(e: &MissionError) -> ExitStatus {
    match e {
        MissionError::Scenario(e) => scenario_status(e),
        MissionError::Log(e) => log_status(e),
        MissionError::ReplayInput(_) => ExitStatus::Usage,
        MissionError::Divergence { .. } => ExitStatus::Divergence,
        _ => ExitStatus::MissionFailed,
    }
}

impl CliError {
    pub fn exit_status(&self) -> ExitStatus {
        match self {
            CliError::Scenario(e) => scenario_status(e),
            CliError::Io { .. } => ExitStatus::Io,
            CliError::Log(e) => log_status(e),
            CliError::Mission(e) => mission_status(e),
            CliError::Serve(ServeError::Mission(e)) => mission_status(e),
            CliError::Serve(ServeError::Usage(_)) => ExitStatus::Usage,
            CliError::Serve(_) => ExitStatus::Io,
            CliError::Operator(operator::ClientError::Mission(e)) => mission_status(e),
            CliError::Operator(_) => ExitStatus::Io,
            CliError::Usage(_) => ExitStatus::Usage,
        }
    }
}

/// `--out` if given, else the environment variable, else [`DEFAULT_OUT_DIR`].
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}
