use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("degenerate auxiliary variable: {0}")]
    DegenerateAuxiliary(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sample size {n} too small for variance estimation (need at least 2)")]
    DesignTooSmall { n: usize },

    #[error("singular Gram matrix (condition estimate {condition:.3e}); reduce the number of knots")]
    SingularGram { condition: f64 },

    #[error("singular Jacobian at beta = ({b0}, {b1})")]
    SingularJacobian { b0: f64, b1: f64 },

    #[error("Newton iterations diverged after {iterations} steps (max |eta| = {max_eta:.1}); likely separation")]
    Diverged { iterations: usize, max_eta: f64 },

    #[error("no convergence after {iterations} iterations (score norm {score_norm:.3e})")]
    NotConverged { iterations: usize, score_norm: f64 },

    #[error("non-positive contingency cell ({x}, {y}) with count {count}")]
    ZeroCell { x: u8, y: u8, count: f64 },

    #[error("{failed} of {total} replicates failed for strategy {strategy}; first error: {first}")]
    TooManyFailures {
        strategy: String,
        failed: usize,
        total: usize,
        first: String,
    },
}
