//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by environments, configuration, and the harness.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A step was requested on an episode that already ended.
    #[error("episode already ended; call reset before stepping again")]
    EpisodeOver,

    /// Input dimensions disagree with the declared spaces.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid configuration value or combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// Unknown environment or algorithm name.
    #[error("unknown {kind} {name:?}; available: {available}")]
    UnknownName {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
