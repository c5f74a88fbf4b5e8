use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown ingredient profile: {0}")]
    UnknownProfile(String),

    #[error("unknown heat power: {0}")]
    UnknownHeat(String),

    #[error("scripted episode failed the success rules: {0}")]
    DemoFailed(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Net(#[from] scramble_net::NetError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
