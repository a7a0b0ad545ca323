use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// Cholesky factorization of the innovation covariance failed.
    #[error("innovation covariance is not positive definite (min pivot {min_pivot:e})")]
    SingularInnovation { min_pivot: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("generator diverged at t={t} (|s|={magnitude:e}) for config {config}")]
    GeneratorInstability {
        t: usize,
        magnitude: f64,
        config: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularInnovation { .. } | Error::NonFinite(_) | Error::GeneratorInstability { .. }
        )
    }
}
