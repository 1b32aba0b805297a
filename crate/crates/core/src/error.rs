use thiserror::Error;

#[derive(Debug, Error)]
pub enum CapeError {
    #[error("invalid frequency spec: {0}")]
    InvalidSpec(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-differentiable point: {0}")]
    NonDifferentiable(String),
    #[error("allocation of {bytes} bytes failed for length {length}")]
    OutOfMemory { length: usize, bytes: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CapeError>;
