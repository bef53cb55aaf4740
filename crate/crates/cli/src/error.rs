//! Command errors tagged with the module they came from and the exit code
//! they map to.

use std::fmt;

/// Whether a failure is the user's input (exit code 2) or the model/runtime
/// (exit code 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Runtime,
}

#[derive(Debug, thiserror::Error)]
#[error("{module}: {message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub module: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(module: &'static str, message: impl fmt::Display) -> Self {
        Self { kind: ErrorKind::Usage, module, message: message.to_string() }
    }

    pub fn runtime(module: &'static str, message: impl fmt::Display) -> Self {
        Self { kind: ErrorKind::Runtime, module, message: message.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Usage => 2,
            ErrorKind::Runtime => 1,
        }
    }
}

impl From<mlnmr::data::DataError> for CliError {
    fn from(e: mlnmr::data::DataError) -> Self {
        Self::usage("data", e)
    }
}

impl From<mlnmr::likelihood::LikelihoodError> for CliError {
    fn from(e: mlnmr::likelihood::LikelihoodError) -> Self {
        Self::runtime("likelihood", e)
    }
}

impl From<mlnmr::population::PopulationError> for CliError {
    fn from(e: mlnmr::population::PopulationError) -> Self {
        Self::runtime("population", e)
    }
}

impl From<mlnmr::comparison::ComparisonError> for CliError {
    fn from(e: mlnmr::comparison::ComparisonError) -> Self {
        Self::runtime("comparison", e)
    }
}

impl From<mlnmr::simulation::SimulationError> for CliError {
    fn from(e: mlnmr::simulation::SimulationError) -> Self {
        Self::runtime("simulation", e)
    }
}

impl From<mlnmr::fit::FitError> for CliError {
    fn from(e: mlnmr::fit::FitError) -> Self {
        use mlnmr::fit::FitError;
        match e {
            FitError::Model(e) => e.into(),
            FitError::Adequacy(e) => Self::runtime("sampler", e),
            FitError::Comparison(e) => e.into(),
        }
    }
}

/// Wraps an I/O failure on `path` as a usage error.
pub fn io_error(path: &std::path::Path, e: impl fmt::Display) -> CliError {
    CliError::usage("io", format!("{}: {e}", path.display()))
}
