//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
///
/// `Contract` marks a caller-side violation (shape mismatch, index out of
/// range, inconsistent arguments) and always names the offending values so
/// the message is actionable without a debugger.
#[derive(Debug, Error)]
pub enum Error {
    /// An API precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration file or flag combination is invalid.
    #[error("invalid config: {0}")]
    Config(String),

    /// A numeric check failed (non-finite value, diverged run).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A dataset, checkpoint, or trace file has the wrong format.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    /// A required file or directory is missing or unreadable.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Builds a `Contract` error from anything displayable.
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Builds an `Io` error that remembers which path failed.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Builds a `Format` error for a named file.
    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable class tag, used by the CLI for its final
    /// diagnostic line.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Numeric(_) => "numeric",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }
}
