use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {what} = {index}, limit {limit}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transition row ({state}, {action}) drifts from 1 by {drift:e}")]
    NonStochastic {
        state: usize,
        action: usize,
        drift: f64,
    },

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("distractor retry budget exhausted after {0} attempts")]
    RetryBudget(usize),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_index(what: &'static str, index: usize, limit: usize) -> Result<()> {
    if index < limit {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { what, index, limit })
    }
}
