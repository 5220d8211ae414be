use thiserror::Error;

/// Errors surfaced by the transport library.
#[derive(Debug, Error)]
pub enum Error {
    /// A field, measure or vector does not conform to the grid it is used with.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid input data (negative masses, off-grid points, bad axes, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Invalid algorithm parameter (non-positive step size, bad tolerance, ...).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// An inner iterative solve did not reach its tolerance.
    #[error("convergence failure after {iterations} iterations: residual {achieved:.3e} > tolerance {tolerance:.3e}")]
    Convergence {
        achieved: f64,
        tolerance: f64,
        iterations: usize,
    },

    /// Post-processing received an iterate it cannot interpret (e.g. a
    /// terminal slice with non-positive total mass).
    #[error("degenerate output: {0}")]
    Degenerate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
