use thiserror::Error;

/// Errors surfaced by the runtime and simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Operations remain but nothing is in flight and the ready queue is
    /// empty. A correct schedule never reaches this state.
    #[error("deadlock: {0}")]
    Deadlock(String),

    /// Two receives were posted for the same transfer tag.
    #[error("transfer match ambiguity: {0}")]
    MatchAmbiguity(String),

    #[error("scheduling invariant violated: {0}")]
    InvariantViolation(String),

    /// A benchmark run disagreed with the sequential oracle.
    #[error("oracle mismatch:\n{0}")]
    OracleMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
