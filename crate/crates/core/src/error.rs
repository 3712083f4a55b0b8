use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid fixed-point format: {0}")]
    InvalidFormat(String),

    #[error("fixed-point overflow trapped ({0} events)")]
    OverflowTrap(u64),

    #[error("unknown probe tap: {0}")]
    UnknownTap(String),

    #[error("no sweep candidate satisfies the noise budget")]
    BudgetUnsatisfiable,

    #[error("streaming width {width} does not divide the FFT size {size}")]
    StreamingWidth { width: usize, size: usize },

    #[error("serialized data is malformed: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
