use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("capability exceeded: {0}")]
    Capability(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("checkpoint error in {cell}: {reason}")]
    Checkpoint { cell: String, reason: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
