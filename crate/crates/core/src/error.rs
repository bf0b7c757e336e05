//! Crate-wide error type.

use std::path::PathBuf;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not line up.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A hyperparameter, spec field or geometry is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data violates a precondition (labels, empty batches, ...).
    #[error("input error: {0}")]
    Input(String),

    /// An API contract was broken (mismatched key sets, wrong cache kind).
    #[error("contract error: {0}")]
    Contract(String),

    /// Image bytes could not be decoded.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    /// A binary container (checkpoint, packed dataset) is malformed.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    /// NaN or infinity escaped a numeric routine.
    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    /// Training diverged.
    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr = {lr})")]
    Diverged { epoch: usize, batch: usize, lr: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
