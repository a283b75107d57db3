use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("no frames in {0}")]
    EmptyInput(PathBuf),

    #[error("malformed annotation file {path}: {reason}")]
    AnnotationParse { path: PathBuf, reason: String },

    #[error("annotation {path}: object #{index}: {reason}")]
    AnnotationInvalid { path: PathBuf, index: usize, reason: String },

    #[error("annotation {path}: unknown class name {name:?}")]
    UnknownClass { path: PathBuf, name: String },

    #[error("only {distinct} distinct boxes for k = {k} clusters; reduce k")]
    DuplicateCentroid { k: usize, distinct: usize },

    #[error("split {split} rounds to zero of {total} sources; use a smaller ratio denominator or more sources")]
    EmptySplit { split: &'static str, total: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
