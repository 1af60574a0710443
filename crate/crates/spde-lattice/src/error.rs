//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A point handed to `κ_n` or a kernel lies outside `[0,1)^d`.
    #[error("coordinate {coord} = {value} lies outside [0,1)")]
    OutOfDomain { coord: usize, value: f64 },

    /// A multi-index is outside the interior index set of its grid.
    #[error("multi-index {index:?} is not in the interior set of the n={n} grid")]
    IndexOutOfRange { index: Vec<usize>, n: usize },

    /// Two objects that must share a grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A configuration gate was violated before any computation started.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A covariance matrix failed its positive-semidefiniteness check.
    #[error("covariance is not positive semidefinite: {0}")]
    NotPositiveSemidefinite(String),

    /// Circulant embedding produced negative eigenvalues beyond tolerance.
    #[error("circulant embedding failed: {0}")]
    EmbeddingFailure(String),

    /// The fixed-point iteration exhausted its iteration budget.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file: {0}")]
    Format(String),
}
