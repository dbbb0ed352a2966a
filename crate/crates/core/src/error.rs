use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("circulant embedding failed: most negative eigenvalue {min_eigenvalue:e} (max {max_eigenvalue:e})")]
    Embedding {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },
    #[error("invalid covariance: spectral kernel reaches {min_value:e} (max {max_value:e})")]
    InvalidCovariance { min_value: f64, max_value: f64 },
    #[error("blocking plan error: {0}")]
    Plan(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },
    #[error("solution left the admissible class at x-index {index}: Im z = {im_z:e}, Im h = {im_h:e}")]
    Class { index: usize, im_z: f64, im_h: f64 },
    #[error("density mass {mass} outside [0.97, 1.03]; widen the energy grid")]
    SupportCoverage { mass: f64 },
    #[error("internal error: {0}")]
    Internal(String),
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    #[error("condition violated: {0}")]
    Condition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
