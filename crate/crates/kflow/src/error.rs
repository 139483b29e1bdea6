use thiserror::Error;

#[derive(Debug, Error)]
pub enum KflowError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] kahler_flow_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, KflowError>;
