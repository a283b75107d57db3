//! Detections JSON-lines: one `{source_id, frame, class, conf, x_min, y_min, x_max, y_max}` per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::Detection;
use crate::error::{CoreError, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub source_id: String,
    pub frame: usize,
    pub class: usize,
    pub conf: f64,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl DetectionRecord {
    pub fn from_detection(source_id: &str, frame: usize, d: &Detection) -> Self {
        let b = d.bbox();
        Self {
            source_id: source_id.to_string(),
            frame,
            class: d.class_id,
            conf: d.confidence,
            x_min: b.x_min,
            y_min: b.y_min,
            x_max: b.x_max,
            y_max: b.y_max,
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox { x_min: self.x_min, y_min: self.y_min, x_max: self.x_max, y_max: self.y_max }
    }

    pub fn center(&self) -> (f64, f64) {
        self.bbox().center()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.conf) {
            return Err(CoreError::Parameter(format!("conf {} outside [0, 1]", self.conf)));
        }
        BBox::new(self.x_min, self.y_min, self.x_max, self.y_max).map(|_| ())
    }
}

pub fn write_detections<W: Write>(mut w: W, records: &[DetectionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads and validates JSON lines; blank lines are skipped.
pub fn read_detections<R: BufRead>(r: R) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(&line).map_err(|e| CoreError::Parameter(format!("detections line {}: {e}", n + 1)))?;
        rec.validate().map_err(|e| CoreError::Parameter(format!("detections line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
