//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("prompt template for '{kind}' is missing a binding for placeholder '{{{name}}}'")]
    MissingSlot { kind: String, name: String },

    #[error("slot '{name}' does not appear in the '{kind}' template")]
    UnknownSlot { kind: String, name: String },

    #[error(transparent)]
    Llm(#[from] crate::llm::LlmError),

    #[error("synthesis aborted: {failed} of {attempted} queries failed (limit {limit:.0}%)")]
    SynthesisFailureRatio {
        failed: usize,
        attempted: usize,
        limit: f64,
    },

    #[error("preference collection aborted: {skipped} of {total} comparisons skipped (limit {limit:.0}%)")]
    ComparisonSkipRatio {
        skipped: usize,
        total: usize,
        limit: f64,
    },

    #[error("non-finite loss at step {step}: max |similarity| = {max_abs_similarity}, batch queries = {batch_queries:?}")]
    NonFiniteLoss {
        step: u64,
        max_abs_similarity: f64,
        batch_queries: Vec<String>,
    },

    #[error("checkpoint error on {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }
}
