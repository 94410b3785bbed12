//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or extent violation; the message names the offending shapes.
    #[error("dimension error: {0}")]
    Dim(String),

    /// Invalid configuration detected before any compute.
    #[error("config error: {0}")]
    Config(String),

    /// API contract violation (e.g. backward on a non-scalar output).
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed file contents (FTEN header, manifest, index).
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
