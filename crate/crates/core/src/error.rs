use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the grounding core.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data could not be read or is structurally missing.
    #[error("ingestion error at {path}: {message}")]
    Ingestion { path: PathBuf, message: String },

    /// Input data was read but violates a domain invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A persisted artifact or backend payload could not be decoded.
    #[error("parse error: {message}")]
    Parse {
        message: String,
        /// Raw payload (backend responses) or empty.
        raw: String,
        /// Byte offset into the input, when known.
        offset: Option<usize>,
    },

    /// A backend could not be reached or kept failing.
    #[error("backend error after {attempts} attempt(s): {message}")]
    Backend { attempts: u32, message: String },

    /// A selection backend answered with an index outside the candidate range.
    #[error("selection error: {0}")]
    Selection(String),

    /// A spatial descriptor could not be resolved against the graph.
    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn ingestion(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Ingestion {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn parse(message: impl Into<String>, raw: impl Into<String>) -> Self {
        Error::Parse {
            message: message.into(),
            raw: raw.into(),
            offset: None,
        }
    }
}
