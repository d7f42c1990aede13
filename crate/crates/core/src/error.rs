use thiserror::Error;

/// Errors raised by the numerical kernels and the scenario driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "quadrature did not converge: achieved error {achieved:.3e}, requested {requested:.3e}"
    )]
    QuadratureNotConverged { achieved: f64, requested: f64 },

    #[error("integral diverges: {0}")]
    Divergent(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time {t} lies outside the coefficient table span [{start}, {end}]")]
    TableExhausted { t: f64, start: f64, end: f64 },

    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("matrix is not Hermitian: deviation {deviation:.3e}")]
    NotHermitian { deviation: f64 },

    #[error("covariance factorization failed: most negative eigenvalue {min_eigenvalue:.3e}")]
    Factorization { min_eigenvalue: f64 },

    #[error("trajectory norm {norm:.3e} exceeded the overflow bound at t = {t}")]
    NormOverflow { norm: f64, t: f64 },

    #[error("{failed} of {total} trajectories failed")]
    EnsembleFailure { failed: usize, total: usize },

    #[error("dressed-kernel order {0} exceeds 3; set the override flag to allow it")]
    OrderTooHigh(usize),

    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("malformed CSV: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
