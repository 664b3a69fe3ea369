use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("context overflow: {len} tokens exceeds max context {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("oracle capability missing: {0}")]
    CapabilityMissing(&'static str),

    #[error("transport failure: {0}")]
    Transport(String),

    /// Structured error returned by a remote oracle.
    #[error("remote error ({kind}): {message}")]
    Remote { kind: String, message: String },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("estimator error: {0}")]
    Estimator(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("exact Shapley refused: {players} perturbable positions exceeds bound {max}")]
    TooManyPlayers { players: usize, max: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    /// Short machine-readable kind, used on the wire.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ContextOverflow { .. } => "context_overflow",
            Error::CapabilityMissing(_) => "capability_missing",
            Error::Transport(_) => "transport",
            Error::Remote { .. } => "remote",
            Error::Protocol(_) => "bad_request",
            Error::Estimator(_) => "estimator",
            Error::NonFinite(_) => "non_finite",
            Error::TooManyPlayers { .. } => "too_many_players",
            Error::InvalidInput(_) => "bad_request",
            Error::Config { .. } => "config",
            Error::Divergence { .. } => "divergence",
            Error::Checkpoint(_) => "checkpoint",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "bad_request",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
