//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
///
/// `Config` covers anything rejected before work starts (bad field values,
/// malformed files); everything else is a runtime failure.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, rejected before any computation ran.
    #[error("config error: {0}")]
    Config(String),
    /// A numeric precondition failed (non-finite gradient entry, bad weight).
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Policies with different vocabularies or context orders were mixed.
    #[error("policy mismatch: {0}")]
    Mismatch(String),
    /// Scenario generation could not satisfy its constraints.
    #[error("scenario error: {0}")]
    Scenario(String),
    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
