use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data failed validation before any computation started.
    #[error("validation error: {0}")]
    Validation(String),

    /// A covariance or Gram matrix could not be factorized within the jitter budget.
    #[error("conditioning failure: {context} (smallest pivot {smallest_pivot:e})")]
    Conditioning { context: String, smallest_pivot: f64 },

    /// An iterative solver hit its iteration cap; `best` is the best iterate seen.
    #[error("no convergence after {iterations} iterations: {context}")]
    Convergence {
        context: String,
        iterations: usize,
        best: Vec<f64>,
    },

    /// A user-supplied function returned a non-finite value.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// The target function has (numerically) zero norm.
    #[error("degenerate target: {0}")]
    DegenerateTarget(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
