use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A line of a tabular or line-delimited input could not be parsed.
    #[error("{source_name}: line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    /// Input parsed but violates a domain invariant.
    #[error("validation failed: {0}")]
    Validation(String),

    /// The caller asked for something that can never succeed with these arguments.
    #[error("usage: {0}")]
    Usage(String),

    /// Configuration is internally inconsistent (unknown model, empty pool, ...).
    #[error("configuration: {0}")]
    Config(String),

    /// Backend could not be reached, possibly after retries.
    #[error("transport: {message}")]
    Transport { message: String, transient: bool },

    /// Backend answered, but not with something we accept.
    #[error("protocol: {message}; raw payload: {raw}")]
    Protocol { message: String, raw: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn protocol(message: impl Into<String>, raw: impl Into<String>) -> Self {
        Error::Protocol {
            message: message.into(),
            raw: raw.into(),
        }
    }

    /// Whether retrying the same request may succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, Error::Transport { transient: true, .. })
    }
}
