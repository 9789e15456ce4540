//! Experiment configuration and execution.

pub mod config;
pub mod dro;
pub mod experiment;
pub mod verify;

use thiserror::Error;

pub use config::{resolve, ExperimentConfig, ResolvedExperiment};
pub use dro::{run_dro_comparison, DroComparison};
pub use experiment::{run_experiment, sweep, ExperimentOutcome, ExperimentSummary, Parallelism, SweepReport};
pub use verify::CheckResult;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<crate::problems::ProblemError> for HarnessError {
    fn from(e: crate::problems::ProblemError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<crate::bilinasa::RunError> for HarnessError {
    fn from(e: crate::bilinasa::RunError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<crate::diagnostics::DiagnosticsError> for HarnessError {
    fn from(e: crate::diagnostics::DiagnosticsError) -> Self {
        HarnessError::Config(e.to_string())
    }
}
