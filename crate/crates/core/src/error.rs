use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("kernel spec parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("degenerate kernel: {0}")]
    Degenerate(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("unsupported kernel: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
