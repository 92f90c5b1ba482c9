use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("symmetric system is numerically singular ({0})")]
    SingularSystem(&'static str),

    #[error("objective became non-finite at iteration {0}")]
    NonFiniteObjective(usize),

    #[error("oracle did not converge after {iterations} iterations (relative change {change:e})")]
    NotConverged { iterations: usize, change: f64 },

    #[error("temporal block {0} is singular")]
    SingularTemporalBlock(usize),

    #[error("invalid terrain profile: {0}")]
    InvalidProfile(String),

    #[error("stream lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("trajectory too short: need at least {needed} poses, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub(crate) fn dim(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            actual,
        }
    }
}
