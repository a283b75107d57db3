use std::path::PathBuf;

use serde::Serialize;

/// Failures surfaced to the user, each with a stable kind and exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {reason}")]
    Path { path: PathBuf, reason: String },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("model: {0}")]
    Model(String),
    #[error("run store: {0}")]
    Runs(String),
}

impl CliError {
    pub fn missing(path: impl Into<PathBuf>) -> Self {
        CliError::Path { path: path.into(), reason: "no such file or directory".into() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Path { .. } => "path",
            CliError::Input(_) => "input",
            CliError::Model(_) => "model",
            CliError::Runs(_) => "runs",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Path { .. } => 3,
            CliError::Input(_) => 4,
            CliError::Model(_) => 5,
            CliError::Runs(_) => 6,
        }
    }
}

/// The single JSON line written to stderr when a command fails.
#[derive(Debug, Serialize)]
pub struct ErrorLine<'a> {
    pub error: ErrorBody<'a>,
}

#[derive(Debug, Serialize)]
pub struct ErrorBody<'a> {
    pub kind: &'a str,
    pub message: String,
    pub exit_code: i32,
}

/// Kind and exit code of an arbitrary error chain: the first `CliError` in
/// the chain decides, anything else is an internal failure (exit 1).
pub fn classify(err: &anyhow::Error) -> (&'static str, i32) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return (e.kind(), e.exit_code());
        }
        if let Some(e) = cause.downcast_ref::<tinydet_core::CoreError>() {
            return core_kind(e);
        }
        if let Some(e) = cause.downcast_ref::<tinydet_detector::DetectorError>() {
            return match e {
                tinydet_detector::DetectorError::Core(c) => core_kind(c),
                tinydet_detector::DetectorError::Checkpoint { .. } => ("model", 5),
                tinydet_detector::DetectorError::Io(_) => ("path", 3),
                _ => ("input", 4),
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ("path", 3);
        }
    }
    ("internal", 1)
}

fn core_kind(e: &tinydet_core::CoreError) -> (&'static str, i32) {
    match e {
        tinydet_core::CoreError::Io(_) => ("path", 3),
        _ => ("input", 4),
    }
}

pub fn error_line(err: &anyhow::Error) -> String {
    let (kind, exit_code) = classify(err);
    let line = ErrorLine { error: ErrorBody { kind, message: format!("{err:#}"), exit_code } };
    serde_json::to_string(&line).expect("error line serializes")
}
