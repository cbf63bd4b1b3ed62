use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite input: {0}")]
    NumericInput(String),

    #[error("linear solver failed at step {step}: residual {residual:.3e} after {iterations} iterations")]
    SolverFailure {
        step: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("measures have unequal mass: {mass_a} vs {mass_b}")]
    UnequalMass { mass_a: f64, mass_b: f64 },

    #[error("dual certification failed: {0}")]
    CertificationFailure(String),

    #[error("particle step failed: {0}")]
    StepFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed input in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
