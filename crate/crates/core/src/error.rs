use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box {0:?}: {1}")]
    InvalidBox([f64; 4], &'static str),

    #[error("validation error in {context}: {message}")]
    Validation { context: String, message: String },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("phrase {0:?} not found in embedding table")]
    MissingPhrase(String),

    #[error("transport error ({context}): {message}")]
    Transport { context: String, message: String },

    #[error("image error ({context}): {message}")]
    Image { context: String, message: String },

    #[error("result undefined: {0}")]
    Undefined(&'static str),

    #[error("incompatible reports: {0}")]
    Incompatible(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn transport(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Transport {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether retrying the same request may succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}
