use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("pose id {0} out of range (pose count {1})")]
    PoseOutOfRange(usize, usize),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint config mismatch on field `{field}`: checkpoint has {ckpt}, expected {expected}")]
    ConfigMismatch {
        field: String,
        ckpt: String,
        expected: String,
    },

    #[error("missing prerequisite stage `{0}`: train it first and pass its checkpoint")]
    MissingStage(String),

    #[error("ambiguous localization: probe pattern matches no known scene state")]
    AmbiguousLocalization,

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}
