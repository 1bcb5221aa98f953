use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{file}: {source}")]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("factorisation failed at ordered index {index}: {reason}")]
    Factorisation { index: usize, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("iteration {iteration}, block {block}: {source}")]
    Chain {
        iteration: usize,
        block: String,
        #[source]
        source: Box<Error>,
    },

    #[error("simulation: {0}")]
    Simulation(String),
}

impl Error {
    pub(crate) fn parse(file: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Io { .. } | Error::Validation(_) | Error::Config(_)
        )
    }
}
