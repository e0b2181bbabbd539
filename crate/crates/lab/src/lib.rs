//! Experiment harness for the Stein gradient flow laboratory: TOML
//! configuration, deterministic runners for particle and mean-field
//! experiments, and persistent CSV/JSONL records with an audit mode.

pub mod config;
pub mod records;
pub mod runner;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<stein_core::CoreError> for LabError {
    fn from(e: stein_core::CoreError) -> Self {
        LabError::Numeric(format!("{e}"))
    }
}

impl LabError {
    /// Process exit codes: 2 for configuration problems, 3 for numeric
    /// or runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Config(_) => 2,
            LabError::Numeric(_) | LabError::Io(_) => 3,
        }
    }
}
