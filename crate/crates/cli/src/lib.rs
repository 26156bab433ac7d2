//! Command-line experiment runner for `psgd-lab`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod run;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid or unreadable configuration (exit code 1).
    #[error("config error: {0}")]
    Config(String),
    /// Failure while running or writing results (exit code 2).
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<psgd_lab::Error> for CliError {
    fn from(e: psgd_lab::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

pub use config::{parse_config, ExperimentConfig, ExperimentKind};
pub use run::run_experiment;
