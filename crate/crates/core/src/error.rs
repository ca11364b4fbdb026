use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stationary distribution is not unique: {0}")]
    Ambiguous(String),

    #[error("energy causality violated: spending {spent} units with {available} available")]
    Causality { spent: u32, available: u32 },

    #[error("protocol state error: {0}")]
    Protocol(String),

    #[error("degenerate observation: zero likelihood in every channel state")]
    DegenerateObservation,

    #[error("state space of {states} states exceeds the configured cap of {cap}")]
    Capacity { states: usize, cap: usize },

    #[error("value iteration did not converge after {iterations} iterations (span {span:e})")]
    Convergence { iterations: usize, span: f64 },

    #[error("model is not unichain: {0}")]
    NotUnichain(String),

    #[error("inconsistent transition model: {0}")]
    Inconsistent(String),

    #[error("{path}:{line}: {msg}")]
    Config {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("trial aborted at slot {slot} ({state}): {source}")]
    Trial {
        slot: u64,
        state: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
