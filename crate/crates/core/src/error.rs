//! Error type shared across the crate.
//!
//! Exit-code mapping for the CLI: `Config` and format errors are usage
//! errors (exit 2); everything else signals a violated numerical contract
//! or an environment failure (exit 1).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or arguments (CLI exit code 2).
    #[error("config error: {0}")]
    Config(String),

    /// Inconsistent matrix/vector shapes between inputs.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A matrix violated its positive-semidefiniteness contract.
    #[error("matrix not positive semidefinite: {0}")]
    NotPsd(String),

    /// A numerical invariant failed (tolerance exceeded, degenerate value).
    #[error("numerical invariant violated: {0}")]
    Numeric(String),

    /// Requested backend cannot handle the given activation.
    #[error("unsupported backend: {0}")]
    UnsupportedBackend(String),

    /// A configured resource cap would be exceeded.
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// CLI process exit code for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Toml(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
