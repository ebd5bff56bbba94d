use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value detected in the derivative with respect to {coordinate}")]
    NonFinite { coordinate: String },

    #[error("dimension mismatch: expected {expected} coordinates, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("zero-cone constraint violated: max |c_i| = {max_abs_casimir:e}")]
    ConeViolation { max_abs_casimir: f64 },

    #[error("invalid system specification: {0}")]
    InvalidSpec(String),

    #[error("realization mismatch: {0}")]
    Realization(String),

    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),

    #[error("newton iteration did not converge after {iterations} iterations; residual trace {trace:?}")]
    NewtonNonConvergence { iterations: usize, trace: Vec<f64> },

    #[error("non-finite state reached at step {step}")]
    NonFiniteState { step: usize },

    #[error("inconsistent evaluation: {0}")]
    Inconsistent(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
