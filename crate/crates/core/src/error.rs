use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter violates its documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two containers disagree along a named axis.
    #[error("shape mismatch on axis `{axis}`: expected {expected}, got {found}")]
    ShapeMismatch {
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    /// A file was readable but its content is not a valid encoding.
    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    /// An iteration produced non-finite values.
    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(axis: &'static str, expected: usize, found: usize) -> Self {
        Error::ShapeMismatch {
            axis,
            expected,
            found,
        }
    }

    /// Process exit code: 1 for I/O, 2 for validation, 3 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            Error::InvalidArgument(_) | Error::ShapeMismatch { .. } | Error::Format { .. } => 2,
            Error::Divergence(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
