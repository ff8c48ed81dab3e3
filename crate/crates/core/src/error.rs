use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus too small: {0}")]
    CorpusTooSmall(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient text: need at least {needed} tokens, got {got}")]
    InsufficientText { needed: usize, got: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("undefined baseline: {0}")]
    UndefinedBaseline(String),

    #[error("insufficient prompts: requested {requested}, available {available}")]
    InsufficientPrompts { requested: usize, available: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing report cells: {0:?}")]
    MissingCells(Vec<String>),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
