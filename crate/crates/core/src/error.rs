//! Error type shared across the crate.
//!
//! Every fallible operation returns [`Error`]. The three broad failure
//! classes map onto distinct process exit codes so scripts driving the CLI
//! can tell a bad config from a numerical blow-up from a filesystem problem.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: bad shapes, out-of-range parameters,
    /// unknown enum strings, inconsistent settings.
    #[error("config error: {0}")]
    Config(String),

    /// Numerical failure: NaN/Inf produced by an operation, a matrix that
    /// is not positive definite, a diverged update.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Filesystem / serialization failure.
    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed data read back from disk (checkpoint, config, report).
    #[error("format error in {path:?}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 1 config, 2 numeric, 3 io/format.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Numeric(_) => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
        }
    }
}
