use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed corpus record; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite loss at epoch {epoch}: training diverged")]
    Diverged { epoch: usize },

    #[error("non-finite {0}")]
    NonFinite(&'static str),

    /// A sweep cell failed; carries the failing grid coordinates.
    #[error("sweep cell ({cell}): {source}")]
    Sweep {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
