//! Command-line experiments: simulate demonstrations, train models, evaluate
//! them in closed loop.

pub mod config;
pub mod experiment;

use terradapt_core::Error;

pub use config::ExperimentConfig;

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    /// Bad flags, config, paths or input files.
    Usage = 1,
    Numerical = 2,
    Verification = 3,
}

impl ExitStatus {
    pub fn for_error(err: &Error) -> Self {
        match err {
            Error::SingularSystem(_)
            | Error::NonFiniteObjective(_)
            | Error::NotConverged { .. }
            | Error::SingularTemporalBlock(_) => ExitStatus::Numerical,
            _ => ExitStatus::Usage,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}
