use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed WAV `{chunk}` chunk: {reason}")]
    WavDecode { chunk: String, reason: String },

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("signal too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("degenerate mel filterbank: {0}")]
    DegenerateFilterbank(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("manifest row {row}: {reason}")]
    Manifest { row: usize, reason: String },

    #[error("feature file {}: {reason}", path.display())]
    FeatureFile { path: PathBuf, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint version {found} is not supported (reader understands version {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("batch norm running statistics are uninitialized; train the model before inference")]
    UninitializedStatistics,

    #[error("backward pass requested for an inference-mode forward pass")]
    InferenceBackward,

    #[error("class code {0} is out of range 0..7")]
    LabelOutOfRange(usize),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn wav(chunk: &str, reason: impl Into<String>) -> Self {
        Error::WavDecode {
            chunk: chunk.to_string(),
            reason: reason.into(),
        }
    }
}
