use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("format error in {origin}: {message}")]
    Format { origin: String, message: String },

    #[error("no content-word lexicon supplied; provide a lexicon.tsv (token<TAB>N|V|ADJ|OTHER) or a stopwords.txt fallback")]
    MissingLexicon,

    #[error("invalid config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(origin: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            origin: origin.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }
}
