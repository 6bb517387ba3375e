use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a shape, range, or format check.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("class id {class} at (row {row}, col {col}) is out of range for {num_classes} classes")]
    ClassOutOfRange {
        row: usize,
        col: usize,
        class: u8,
        num_classes: usize,
    },

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A loss term or network output went NaN/Inf.
    #[error("non-finite {part}: {value}")]
    NonFinite { part: String, value: f64 },

    #[error("shape sampler exceeded its rejection budget: {rejected} rejected for {accepted} accepted (rate {rate:.3})")]
    RejectionBudget {
        accepted: usize,
        rejected: usize,
        rate: f64,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn file(path: &Path, message: impl Into<String>) -> Self {
        Error::File {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad inputs or configuration rather than by
    /// something going wrong while computing.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_) | Error::ClassOutOfRange { .. } | Error::File { .. } | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Rejects NaN/Inf with the name of the quantity that produced it.
pub fn ensure_finite(part: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            part: part.to_string(),
            value,
        })
    }
}
