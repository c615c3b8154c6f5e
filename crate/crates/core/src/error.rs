use thiserror::Error;

/// Errors produced by the sampler, planner and verification harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input: wrong dimension, non-finite value, out-of-range parameter.
    #[error("usage error: {0}")]
    Usage(String),

    /// The requested accuracy cannot be planned for (for example the step size would reach 1).
    #[error("planning error: {0}")]
    Planning(String),

    /// A chain produced a non-finite coordinate.
    #[error("chain {chain} diverged at iteration {iteration}")]
    Divergence { chain: usize, iteration: usize },

    /// An analytically impossible condition was hit (for example an indefinite kernel covariance).
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}

pub(crate) fn check_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return usage(format!("{what}: dimension {got} does not match {want}"));
    }
    Ok(())
}

pub(crate) fn check_finite(what: &str, xs: &[f64]) -> Result<()> {
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        return usage(format!("{what}: non-finite entry at index {i}"));
    }
    Ok(())
}
