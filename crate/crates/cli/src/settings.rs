//! Optional `key = value` configuration file. Command-line flags override
//! it, and it overrides built-in defaults. Every key is optional:
//!
//! ```text
//! model = "runs/train-.../model.tdw"   # default checkpoint
//! runs_dir = "runs"
//! conf = 0.5                           # detection confidence threshold
//! nms_iou = 0.45                       # DIoU-NMS overlap threshold
//! b1 = 0.5                             # relaxed matching: IoU floor
//! b2 = 0.45                            # relaxed matching: relaxed IoU floor
//! r = 3.0                              # relaxed matching: center distance (px)
//! gate_px = 20.0                       # tracker association gate
//! max_gap = 2                          # frames a track may miss
//! fps = 25.0
//! um_per_px = 0.5                      # omit to report px/s
//! smooth_window = 5
//! vap_min = 25.0                       # motile threshold, report unit
//! port = 8080
//! seed = 0
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub model: Option<PathBuf>,
    pub runs_dir: Option<PathBuf>,
    pub conf: Option<f64>,
    pub nms_iou: Option<f64>,
    pub b1: Option<f64>,
    pub b2: Option<f64>,
    pub r: Option<f64>,
    pub gate_px: Option<f64>,
    pub max_gap: Option<usize>,
    pub fps: Option<f64>,
    pub um_per_px: Option<f64>,
    pub smooth_window: Option<usize>,
    pub vap_min: Option<f64>,
    pub port: Option<u16>,
    pub seed: Option<u64>,
}

pub const DEFAULT_RUNS_DIR: &str = "runs";
pub const DEFAULT_PORT: u16 = 8080;

impl Settings {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Input(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Path { path: path.into(), reason: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn runs_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf).or_else(|| self.runs_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_RUNS_DIR))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_keys_and_rejects_unknown() {
        let s = Settings::parse("conf = 0.3\nmodel = \"m.tdw\"\nmax_gap = 4\n").unwrap();
        assert_eq!(s.conf, Some(0.3));
        assert_eq!(s.model, Some(PathBuf::from("m.tdw")));
        assert_eq!(s.max_gap, Some(4));
        assert!(Settings::parse("colour = 1").is_err());
    }
}
