use thiserror::Error;

/// Everything that can go wrong between assembly and the outer trust-region loop.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    /// A direct factorization met a non-positive pivot.
    #[error("matrix is not positive definite (pivot {pivot}: {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    /// The PDE operator at some parameter failed to factorize.
    #[error("model error at mu = {mu:?}: {reason}")]
    Model { mu: Vec<f64>, reason: String },

    #[error("reduced system is numerically singular: {0}")]
    Degenerate(String),

    #[error("ordering error: {0}")]
    Ordering(String),

    #[error("estimator inapplicable: {0}")]
    EstimatorInapplicable(String),

    #[error("objective not strictly positive: J_r({mu:?}) = {value:e}")]
    Positivity { mu: Vec<f64>, value: f64 },

    /// Backtracking exhausted its step budget without meeting both the
    /// Armijo and trust-region conditions.
    #[error("line search failed: {0}")]
    LineSearch(String),

    #[error("optimizer aborted: {0}")]
    Aborted(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
