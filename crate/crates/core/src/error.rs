use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum BonError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("unsolvable: {0}")]
    Unsolvable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BonError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(BonError::Domain(msg.into()))
}
