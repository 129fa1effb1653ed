use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid correlation matrix: {0}")]
    InvalidCorrelation(String),

    #[error("matrix is indefinite: pivot {index} is {pivot:e}")]
    Indefinite { index: usize, pivot: f64 },

    #[error("matrix is singular: pivot {index} is {pivot:e}; consider ridge regularization (Sigma + eps*I)")]
    Singular { index: usize, pivot: f64 },

    #[error("knockoff construction infeasible: smallest eigenvalue {lambda_min:e}")]
    Infeasible { lambda_min: f64 },

    #[error("covariance block of group {group} is singular even after ridge regularization")]
    SingularGroup { group: usize },

    #[error("invalid group structure: {0}")]
    Groups(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("matrix of dimension {dim} exceeds the memory guard of {limit}")]
    TooLarge { dim: usize, limit: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numbers themselves rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Indefinite { .. }
                | Error::Singular { .. }
                | Error::Infeasible { .. }
                | Error::SingularGroup { .. }
        )
    }
}
