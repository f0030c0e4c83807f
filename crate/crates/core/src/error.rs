use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative scheme failed to reach its tolerance.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// A root bracket could not be established or was exhausted.
    #[error("bracket failure: {0}")]
    Bracket(String),

    /// Discretization too coarse / truncated mass over budget.
    #[error("grid resolution: {0}")]
    GridResolution(String),

    /// Structurally invalid input (sizes, counts, malformed rows).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_prob(x: f64, name: &str) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) || x.is_nan() {
        return Err(Error::Domain(format!("{name} must lie in [0,1], got {x}")));
    }
    Ok(x)
}

pub(crate) fn ensure_open_prob(x: f64, name: &str) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!(
            "{name} must lie in the open interval (0,1), got {x}"
        )));
    }
    Ok(x)
}

pub(crate) fn ensure_positive(x: f64, name: &str) -> Result<f64> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!("{name} must be positive and finite, got {x}")));
    }
    Ok(x)
}

pub(crate) fn ensure_nonneg(x: f64, name: &str) -> Result<f64> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!(
            "{name} must be nonnegative and finite, got {x}"
        )));
    }
    Ok(x)
}
