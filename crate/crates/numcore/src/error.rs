use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("degenerate batch: batch normalization needs at least 2 rows in train mode, got {0}")]
    DegenerateBatch(usize),
}

pub type Result<T> = std::result::Result<T, NumError>;
