use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the segmentation library and CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range caller input.
    #[error("input error: {0}")]
    Input(String),
    /// An internal invariant was violated (inconsistent sampler state).
    #[error("state error: {0}")]
    State(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 1 for input and I/O problems, 2 for invariant breaches.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Io { .. } => 1,
            Error::State(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
