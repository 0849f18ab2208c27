use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("policy output rejected: {0}")]
    PolicyOutput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at update step {step}: {what} is not finite")]
    Divergence { step: usize, what: &'static str },

    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status associated with this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Checkpoint(_) => 2,
            Error::Divergence { .. } => 3,
            Error::Io { .. } => 4,
            Error::PolicyOutput(_) => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
