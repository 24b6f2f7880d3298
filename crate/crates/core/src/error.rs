use std::io;

use thiserror::Error;

/// Errors produced anywhere in the retrieval stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to decode image: {0}")]
    Decode(String),
    #[error("unsupported image format")]
    UnsupportedFormat,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("image too small: {0}")]
    ImageTooSmall(String),
    #[error("insufficient edge pixels: need {needed}, found {found}")]
    InsufficientEdges { needed: usize, found: usize },
    #[error("too few samples for k-means: {samples} samples, k = {k}")]
    TooFewSamples { samples: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate document id {0:?}")]
    DuplicateDoc(String),
    #[error("rankings to fuse cover different document sets")]
    UniverseMismatch,
    #[error("query group {0:?} has fewer than 2 members")]
    GroupTooSmall(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
