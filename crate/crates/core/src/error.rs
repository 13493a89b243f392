use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic in {0}")]
    BadMagic(String),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed blob: {0}")]
    Format(String),
    #[error("document {doc_id}: {message}")]
    Invariant { doc_id: String, message: String },
    #[error("empty document: {0}")]
    EmptyDocument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
