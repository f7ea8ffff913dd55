use thiserror::Error;

/// Errors produced by problem evaluation and the solver building blocks.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A vector or matrix did not have the expected size.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A point required to be feasible was outside the set.
    #[error("infeasible point: distance {distance:.3e} from the feasible set")]
    Infeasible { distance: f64 },

    /// A numeric operation failed (non-finite values, factorization failure).
    #[error("numeric failure: {0}")]
    Numeric(String),
}
