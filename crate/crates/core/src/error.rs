use thiserror::Error;

use crate::linalg::LinalgError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("exhaustive search needs {required} candidates, cap is {cap}")]
    EnumerationCap { required: u128, cap: u128 },

    #[error("{} column(s) failed, first at column {}: {}", .0.len(), .0[0].0, .0[0].1)]
    Columns(Vec<(usize, Error)>),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed matrix file: {reason}")]
    Format { path: String, reason: String },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True when the failure is a numerical breakdown (non-PD matrix, no convergence).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Linalg(_) => true,
            Error::Columns(cols) => cols.iter().any(|(_, e)| e.is_numerical()),
            _ => false,
        }
    }
}
