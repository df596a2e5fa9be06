use std::path::PathBuf;

use thiserror::Error;

/// Violations of the corpus data model or of metric preconditions.
#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("document {doc_key}: {message}")]
    Document { doc_key: String, message: String },
    #[error("mention {0} appears twice in one cluster")]
    DuplicateMention(String),
    #[error("corpus {0} contains no documents")]
    EmptyCorpus(String),
}

impl ValidationError {
    pub(crate) fn doc(doc_key: &str, message: impl Into<String>) -> Self {
        ValidationError::Document { doc_key: doc_key.to_string(), message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: malformed record: {source}", path.display())]
    Parse { path: PathBuf, line: usize, source: serde_json::Error },
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("model: {0}")]
    Model(String),
    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },
    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
