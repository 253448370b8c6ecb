use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrissError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("corpus load error at line {line}: {message}")]
    CorpusLoad { line: usize, message: String },

    #[error("invalid document {doc_id}: {message}")]
    InvalidDocument { doc_id: String, message: String },

    #[error("unknown frame name: {0}")]
    UnknownFrame(String),

    #[error("document {0} has no usable sentences after filtering")]
    UnusableDocument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FrissError>;
