use thiserror::Error;

#[derive(Debug, Error)]
pub enum SviError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid scenario space: {0}")]
    InvalidSpace(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("map evaluation produced a non-finite value in scenario {scenario}")]
    NonFinite { scenario: usize },

    #[error("Newton system is singular even after Tikhonov regularization")]
    SingularNewtonSystem,

    #[error("symmetric eigensolver failed: {0}")]
    Eigen(String),

    #[error("complementarity enumeration limited to dimension {limit}, got {dim}")]
    TooLarge { dim: usize, limit: usize },

    #[error("instance generation failed: {0}")]
    Generation(String),

    #[error("malformed instance: {0}")]
    Instance(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = SviError> = std::result::Result<T, E>;
