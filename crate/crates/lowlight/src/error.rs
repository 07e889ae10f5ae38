use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {reason}")]
    ImageFormat { path: PathBuf, reason: String },

    #[error("image has a zero dimension")]
    ZeroDimension,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("crop ({x},{y}) size {size} out of bounds for {width}x{height} image")]
    OutOfBounds {
        x: usize,
        y: usize,
        size: usize,
        width: usize,
        height: usize,
    },

    #[error("operands belong to different differentiation graphs")]
    GraphMismatch,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("differentiation graph already consumed by a previous backward pass")]
    GraphConsumed,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate statistics: {0}")]
    Degenerate(String),

    #[error("non-finite value in `{term}` at step {step}")]
    NonFinite { term: String, step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
