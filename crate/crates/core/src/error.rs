use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two vectors or tensors that must agree in size do not.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Input data is too small for the requested window or kernel.
    #[error("input too small: {0}")]
    TooSmall(String),

    /// A fitting procedure needs both classes and received one.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Randomised sampling gave up after its retry budget.
    #[error("sampling failed: {0}")]
    SamplingExhausted(String),

    /// Data read from disk is malformed.
    #[error("malformed data in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A persisted model does not match what the caller supplied.
    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input data rather than a model mismatch.
    pub fn is_model_mismatch(&self) -> bool {
        matches!(self, Error::ModelMismatch(_))
    }
}

pub(crate) fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
