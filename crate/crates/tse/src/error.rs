//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide error enum.
#[derive(Debug, thiserror::Error)]
pub enum TseError {
    /// A domain type failed its invariant checks.
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    /// A numeric input or intermediate value was NaN/inf.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The explicit solver left the stable regime.
    #[error("solver instability at output row {row}: {detail}")]
    Unstable { row: usize, detail: String },

    /// Training aborted on a non-finite loss or gradient.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    /// Mismatched sizes between paired inputs.
    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    /// File parsing failed; carries the location when known.
    #[error("parse error in {path}: line {line}: {why}")]
    Parse {
        path: PathBuf,
        line: usize,
        why: String,
    },

    /// Configuration file rejected.
    #[error("config error: {0}")]
    Config(String),

    /// I/O failure with path context.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TseError {
    pub fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        TseError::Invalid {
            what,
            why: why.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TseError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, TseError>;
