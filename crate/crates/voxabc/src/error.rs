//! Crate-wide error type with a stable exit-code mapping for the CLI.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent configuration (schemas, ranges, paths).
    #[error("config error: {0}")]
    Config(String),
    /// Malformed or mismatched data (payload sizes, geometry, coverage).
    #[error("data error: {0}")]
    Data(String),
    /// A run would exceed the configured memory budget.
    #[error("memory budget error: {0}")]
    Budget(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn budget(msg: impl Into<String>) -> Self {
        Error::Budget(msg.into())
    }

    /// Process exit code contract: 0 success, 2 config, 3 data, 4 budget,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Budget(_) => 4,
            Error::Io(_) | Error::Json(_) => 1,
        }
    }
}
