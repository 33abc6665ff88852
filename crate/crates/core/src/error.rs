use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A required input (cache, basis, checkpoint section) is missing or stale.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// An operation was called in the wrong order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),

    /// A numerical solver could not produce an answer.
    #[error("solver error: {0}")]
    Solver(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    /// An enumeration would exceed its configured budget.
    #[error("search budget exceeded: {required} candidate evaluations required, budget is {budget}")]
    Budget { required: u128, budget: u128 },

    /// A file could not be parsed.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
