use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite value in {context} at step {step}")]
    NonFinite { context: String, step: usize },

    #[error("non-finite gradient in block {block}")]
    NonFiniteGradient { block: String },

    #[error("training diverged at epoch {epoch}: loss {loss} vs initial {initial}")]
    Divergence { epoch: usize, loss: f64, initial: f64 },

    #[error("episode too short: {len} frames (need at least 2)")]
    EpisodeTooShort { len: usize },

    #[error("missing per-step records: {0}")]
    MissingRecords(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("environment: {0}")]
    Environment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl NetError {
    pub fn shape(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        NetError::ShapeMismatch {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, NetError>;
