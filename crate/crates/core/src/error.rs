use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum MvError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("labels are all identical; correlation with the response is undefined")]
    DegenerateLabels,

    #[error("information matrix is singular after ridge escalation (last ridge {ridge:e}): {context}")]
    SingularMatrix { context: String, ridge: f64 },

    #[error("non-finite objective encountered at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("malformed line {line} in {file}: {reason}")]
    Parse { file: String, line: usize, reason: String },

    #[error("incomplete trial {trial} in {file}: {reason}")]
    IncompleteTrial { file: String, trial: String, reason: String },

    #[error("missing preprocessing artifact: {0}")]
    MissingArtifact(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MvError {
    pub(crate) fn dims(expected: impl Into<String>, found: impl Into<String>) -> Self {
        MvError::DimensionMismatch {
            expected: expected.into(),
            found: found.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        MvError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, MvError::SingularMatrix { .. } | MvError::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, MvError>;
