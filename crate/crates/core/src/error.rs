use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("non-finite intermediate value: {0}")]
    Overflow(String),

    #[error("matrix error: {0}")]
    Matrix(String),

    /// The partial likelihood has no finite maximiser (monotone likelihood).
    #[error("separation detected: |beta| = {norm:.3e} is diverging (bound {bound:.3e})")]
    Separation { norm: f64, bound: f64 },

    /// The information matrix is singular at the current iterate.
    #[error("degenerate likelihood: {0}")]
    Degenerate(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("range error: {0}")]
    Range(String),

    #[error("phase boundary reached: zeta = {zeta} >= 1")]
    PhaseBoundary { zeta: f64 },

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
