use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

/// Errors surfaced by the pipeline.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("midi: {0}")]
    Midi(String),

    #[error("score: {0}")]
    Score(String),

    #[error("schema: {0}")]
    Schema(String),

    #[error("tokenizer: {0}")]
    Tokenizer(String),

    #[error("corruption: {0}")]
    Corruption(String),

    #[error("model: {0}")]
    Model(String),

    #[error("training: {0}")]
    Training(String),

    #[error("task: {0}")]
    Task(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("shard: {0}")]
    Shard(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
