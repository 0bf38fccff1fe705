use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
///
/// The variants are coarse on purpose: callers (mostly the CLI) map each one
/// to its own exit code and one-line diagnostic.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (bad index, wrong count).
    #[error("usage error: {0}")]
    Usage(String),
    /// Inconsistent or out-of-range configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// A file exists but its contents do not parse.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    /// A required input file is missing.
    #[error("{what} not found: {path}")]
    NotFound { what: &'static str, path: PathBuf },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
