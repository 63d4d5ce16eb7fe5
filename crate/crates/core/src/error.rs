use std::io;

use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched shapes, invalid layer geometry or out-of-range settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// A NaN or infinity appeared in a forward or backward pass.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API was called in the wrong state (e.g. stepping a finished episode).
    #[error("usage error: {0}")]
    Usage(String),

    /// Broken internal bookkeeping such as a tape replayed against the wrong network.
    #[error("internal error: {0}")]
    Internal(String),

    /// A checkpoint, log or metrics file could not be decoded.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
