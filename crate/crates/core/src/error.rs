use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]: {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("synthetic scene generation failed: {0}")]
    Generation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    /// Short machine-readable category, used by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidBox { .. } | Error::InvalidScene(_) | Error::InvalidInput(_) => "input",
            Error::InvalidConfig(_) => "config",
            Error::Shape(_) => "shape",
            Error::Parse { .. } => "parse",
            Error::Generation(_) => "generation",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
