//! Shared error type for the whole crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad dimensions, ranges, rates).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A caller broke an operation's stated precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Densification could not reach the target ratio within the length cap.
    #[error("densification overflow: {0}")]
    DensifyOverflow(String),

    /// An operation would produce a degenerate output (e.g. too few frames).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// NaN/Inf or other numeric failure; the offending node is named.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Checkpoint or dataset file is corrupt or truncated.
    #[error("corrupt file: {0}")]
    Corrupt(String),

    /// CLI / API misuse (unknown variant, missing argument).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    /// Exit code for the CLI: 0 success, 1 usage, 2 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}
