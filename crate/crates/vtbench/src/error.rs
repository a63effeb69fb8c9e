//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dataset file not found: {0}")]
    MissingFile(PathBuf),

    #[error("{path}: row {row} has {got} values, expected {expected}")]
    RaggedRow {
        path: PathBuf,
        row: usize,
        expected: usize,
        got: usize,
    },

    #[error("{path}: row {row}: bad numeric token {token:?}")]
    BadToken {
        path: PathBuf,
        row: usize,
        token: String,
    },

    #[error("{0}: fewer than 2 distinct labels in TRAIN")]
    SingleClass(String),

    #[error("holdout fraction {0} outside (0, 1)")]
    BadFraction(f64),

    #[error("invalid chart spec: {0}")]
    InvalidChartSpec(String),

    #[error("cannot render an empty series")]
    EmptySeries,

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("batchnorm eval requested before any train step set running stats")]
    BatchNormStatsUnset,

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("statistics: {0}")]
    Stats(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}
