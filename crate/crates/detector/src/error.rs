use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DetectorError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bad checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("non-finite {what} in phase {phase}, epoch {epoch}; batch dumped to {dump:?}")]
    NonFinite { what: &'static str, phase: u8, epoch: usize, dump: Option<PathBuf> },

    #[error("training data: {0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] tinydet_core::CoreError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
