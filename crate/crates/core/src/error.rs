use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// The system cannot be solved stably as posed. Callers should fall back
    /// to the equidistant or regularized paths.
    #[error("ill-posed system (condition number {condition_number:.3e}): {reason}")]
    IllPosed {
        condition_number: f64,
        reason: String,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("clustering failed: {0}")]
    Clustering(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn ill_posed(condition_number: f64, reason: impl Into<String>) -> Self {
        Error::IllPosed {
            condition_number,
            reason: reason.into(),
        }
    }
}
