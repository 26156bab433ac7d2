use thiserror::Error;

/// Errors raised by model construction, validation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unstable noise model: spectral radius {radius} of the VAR(1) coefficient must be < 1")]
    Unstable { radius: f64 },

    #[error("covariance matrix is not symmetric positive semidefinite: {0}")]
    NotPsd(String),

    /// A modelling assumption is violated; `assumption` names it (e.g. "A4").
    #[error("{assumption} violated: {detail}")]
    Assumption { assumption: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular matrix: degenerate directions {directions:?}")]
    Singular { directions: Vec<Vec<f64>> },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
