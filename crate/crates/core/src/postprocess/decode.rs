use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{BBox, Letterbox};
use crate::grid::{sigmoid, GridPrediction, SLOT_CLASS0, SLOT_CONF, SLOT_TH, SLOT_TW, SLOT_TX, SLOT_TY};
use crate::ingest::AnchorSet;

/// A decoded box in source-image pixels, center-size form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub b_x: f64,
    pub b_y: f64,
    pub b_w: f64,
    pub b_h: f64,
    pub class_id: usize,
    /// Objectness times the best class probability.
    pub confidence: f64,
    pub row: usize,
    pub col: usize,
    pub anchor: usize,
    /// Flat slot index; breaks confidence ties deterministically.
    pub provenance: usize,
}

impl Detection {
    pub fn bbox(&self) -> BBox {
        BBox::from_center_size(self.b_x, self.b_y, self.b_w, self.b_h)
    }
}

/// Decodes every slot whose confidence reaches `conf_threshold`:
///
/// `b_x = (sigmoid(t_x) + C_x) * stride`, `b_w = P_w * exp(t_w)` (likewise
/// for y/h), then maps the box from network to source coordinates.
pub fn decode(pred: &GridPrediction, anchors: &AnchorSet, conf_threshold: f64, letterbox: &Letterbox) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(CoreError::Parameter(format!("confidence threshold {conf_threshold} outside [0, 1]")));
    }
    let g = pred.geometry;
    if anchors.len() != g.n_anchors {
        return Err(CoreError::Shape(format!("{} anchors for a head with {} slots per cell", anchors.len(), g.n_anchors)));
    }
    if pred.values.len() != g.len() {
        return Err(CoreError::Shape(format!("prediction has {} values, geometry needs {}", pred.values.len(), g.len())));
    }
    let stride = g.stride as f64;
    let mut out = Vec::new();
    for slot in 0..g.n_slots() {
        let v = pred.slot(slot);
        let objectness = sigmoid(v[SLOT_CONF]);
        let (class_id, class_p) =
            v[SLOT_CLASS0..]
                .iter()
                .map(|&p| sigmoid(p))
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, p)| if p > best.1 { (i, p) } else { best });
        let confidence = (objectness * class_p).clamp(0.0, 1.0);
        if confidence < conf_threshold {
            continue;
        }
        let (row, col, anchor) = g.slot_coords(slot);
        let (pw, ph) = anchors.get(anchor);
        let net = BBox::from_center_size(
            (sigmoid(v[SLOT_TX]) + col as f64) * stride,
            (sigmoid(v[SLOT_TY]) + row as f64) * stride,
            pw * v[SLOT_TW].exp(),
            ph * v[SLOT_TH].exp(),
        );
        let src = letterbox.to_source(&net);
        let (b_x, b_y) = src.center();
        let (b_w, b_h) = (src.width(), src.height());
        if !(b_w > 0.0 && b_h > 0.0 && b_w.is_finite() && b_h.is_finite()) {
            continue;
        }
        out.push(Detection { b_x, b_y, b_w, b_h, class_id, confidence, row, col, anchor, provenance: slot });
    }
    Ok(out)
}
