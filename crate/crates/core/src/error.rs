use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),

    #[error("stale activation cache: cache version {cache}, parameters at version {params}")]
    StaleCache { cache: u64, params: u64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
