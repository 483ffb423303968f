use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the tagging pipeline.
#[derive(Debug, Error)]
pub enum RadarError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unknown tag `{tag}` referenced by video `{video}`")]
    UnknownTag { video: String, tag: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl RadarError {
    /// Whether the error stems from bad user input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        !matches!(self, RadarError::Diverged { .. } | RadarError::Io { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RadarError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = RadarError> = std::result::Result<T, E>;
