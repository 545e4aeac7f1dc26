use thiserror::Error;

/// Errors raised by model construction, kernels and drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("non-finite gradient at coordinate {coordinate}")]
    NonFiniteGradient { coordinate: usize },

    #[error("log-concavity violated: {0}")]
    NotLogConcave(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("singular covariance; linearly dependent coordinates {coordinates:?}")]
    SingularCovariance { coordinates: Vec<usize> },

    #[error("optimizer failed: {message} (last iterate {last_iterate:?})")]
    Optimizer {
        message: String,
        last_iterate: Vec<f64>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
