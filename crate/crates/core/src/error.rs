//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the modeling, inference, and data pipelines.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad hyperparameters, inconsistent dimensions in a config).
    #[error("configuration error: {0}")]
    Config(String),

    /// Bad input data (missing files, unparseable cells, schema violations).
    #[error("input error: {0}")]
    Input(String),

    /// Dimension mismatch between values that must conform.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Index outside its declared range.
    #[error("index out of range: {0}")]
    Range(String),

    /// Numerical failure (non-SPD matrix, non-finite value, underflow).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Internal state violated an invariant, or an operation was called on
    /// state that cannot support it (e.g. an empty trace).
    #[error("state error: {0}")]
    State(String),
}

impl Error {
    /// True for errors caused by user-supplied configuration or input,
    /// as opposed to runtime/numeric failures.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Input(_) | Error::Shape(_) | Error::Range(_)
        )
    }

    /// Prefix the message with the pipeline stage that failed.
    pub fn at_stage(self, stage: &str) -> Error {
        match self {
            Error::Config(m) => Error::Config(format!("{stage}: {m}")),
            Error::Input(m) => Error::Input(format!("{stage}: {m}")),
            Error::Shape(m) => Error::Shape(format!("{stage}: {m}")),
            Error::Range(m) => Error::Range(format!("{stage}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{stage}: {m}")),
            Error::State(m) => Error::State(format!("{stage}: {m}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
