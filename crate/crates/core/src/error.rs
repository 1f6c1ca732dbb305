use thiserror::Error;

/// Errors shared across all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("episode overrun: step called at t={t} with horizon {horizon}")]
    EpisodeOver { t: u32, horizon: u32 },
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("validation error: {0}")]
    Validation(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
