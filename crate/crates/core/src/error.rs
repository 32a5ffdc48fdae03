use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    /// A replay buffer cannot serve the request yet. Callers skip the update.
    #[error("not ready: need {need} samples, have {have}")]
    NotReady { need: usize, have: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
