use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    /// A configuration value violates its documented constraint.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// Stored or supplied data does not match what was expected.
    #[error("data error at index {index}: {message}")]
    Data { index: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A mathematical precondition (simplex, positivity) does not hold.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("non-finite input: {0}")]
    NumericInput(String),

    /// Statistical input on which the requested quantity is undefined.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged at step {step}: {message}")]
    Diverged { step: u64, message: String },

    #[error("checkpoint does not match configuration: {0}")]
    ConfigHashMismatch(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl LabError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
