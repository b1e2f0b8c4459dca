use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Points or gaps violate the design invariants; `index` is 1-based.
    #[error("invalid design at index {index}: {reason}")]
    InvalidDesign { index: usize, reason: String },

    #[error("invalid design size: {0}")]
    InvalidSize(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("trend basis is linearly dependent on the design (rank {rank} < {cols})")]
    LinearDependence { rank: usize, cols: usize },

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("non-finite objective at theta = {theta}: {what}")]
    NumericalFailure { theta: f64, what: String },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Domain,
    Io,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidDesign { .. }
            | Error::InvalidSize(_)
            | Error::InvalidParameter(_)
            | Error::Overflow(_)
            | Error::LinearDependence { .. } => ErrorKind::Domain,
            Error::Io { .. } | Error::Parse { .. } => ErrorKind::Io,
            Error::Conditioning(_) | Error::NumericalFailure { .. } | Error::NonFinite(_) => {
                ErrorKind::Numerical
            }
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
