use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by layer {layer}")]
    NumericOverflow { layer: usize },

    #[error("non-finite {what} at optimizer step {step}")]
    NonFinite { what: &'static str, step: u64 },

    #[error("training aborted at epoch {epoch}: {source}")]
    TrainingAborted {
        epoch: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error after {written} bytes: {source}")]
    PartialWrite {
        written: u64,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt run file: {detail}")]
    Corruption { detail: String },

    #[error("truncated frame after {}", match .last_complete {
        Some(i) => format!("snapshot index {i}"),
        None => "header (no complete snapshot)".to_string(),
    })]
    Truncated { last_complete: Option<usize> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("runs describe different shapes: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
