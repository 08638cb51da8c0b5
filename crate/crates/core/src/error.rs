use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload size mismatch: header declares {expected} values, payload holds {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("training diverged at iteration {iteration}: {message}")]
    Divergence { iteration: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
