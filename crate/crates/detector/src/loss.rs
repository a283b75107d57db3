//! CIoU box loss plus binary cross-entropy on objectness and classes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use tinydet_core::geometry::BBox;
use tinydet_core::grid::{sigmoid, GridPrediction, SLOT_CLASS0, SLOT_CONF, SLOT_TH, SLOT_TW, SLOT_TX, SLOT_TY};
use tinydet_core::ingest::AnchorSet;

use crate::dual::{Dual, Real};
use crate::error::{DetectorError, Result};
use crate::targets::TargetTensor;

/// Probabilities entering the cross-entropy are clamped to `[eps, 1 - eps]`.
pub const BCE_EPS: f64 = 1e-7;

/// Floor on predicted box sides, so degenerate boxes give a finite loss.
pub const BOX_SIDE_EPS: f64 = 1e-9;

/// Size offsets beyond this are clamped (zero gradient) to keep `exp` finite.
const MAX_SIZE_LOGIT: f64 = 30.0;

/// `1 - IoU + rho^2 / c^2 + alpha v` for a predicted box given by center and
/// size. `alpha = v / (1 - IoU + v)` is differentiated as a function of the
/// box, like every other term.
pub fn ciou_generic<T: Real>(px: T, py: T, pw: T, ph: T, gt: &BBox) -> T {
    let eps = T::cst(BOX_SIDE_EPS);
    let (pw, ph) = (pw.max(eps), ph.max(eps));
    let half = T::cst(0.5);
    let (px0, px1, py0, py1) = (px - pw * half, px + pw * half, py - ph * half, py + ph * half);
    let (gx0, gx1, gy0, gy1) = (T::cst(gt.x_min), T::cst(gt.x_max), T::cst(gt.y_min), T::cst(gt.y_max));
    let (gw, gh) = (gt.width(), gt.height());
    let zero = T::cst(0.0);
    let iw = (px1.min(gx1) - px0.max(gx0)).max(zero);
    let ih = (py1.min(gy1) - py0.max(gy0)).max(zero);
    let inter = iw * ih;
    let union = pw * ph + T::cst(gw * gh) - inter;
    let iou = inter / union;
    let cw = px1.max(gx1) - px0.min(gx0);
    let ch = py1.max(gy1) - py0.min(gy0);
    let (gcx, gcy) = gt.center();
    let rho2 = (px - T::cst(gcx)).sq() + (py - T::cst(gcy)).sq();
    let c2 = cw.sq() + ch.sq();
    let v = T::cst(4.0 / (PI * PI)) * (T::cst((gw / gh).atan()) - (pw / ph).atan()).sq();
    let one = T::cst(1.0);
    let aspect = if v.value() == 0.0 { zero } else { v.sq() / (one - iou + v) };
    one - iou + rho2 / c2 + aspect
}

/// CIoU loss between two boxes; zero iff they coincide.
pub fn ciou_loss(pred: &BBox, gt: &BBox) -> f64 {
    let (x, y) = pred.center();
    ciou_generic(x, y, pred.width(), pred.height(), gt)
}

/// Loss and its gradient w.r.t. the predicted `(center x, center y, w, h)`.
pub fn ciou_loss_grad(pred: [f64; 4], gt: &BBox) -> (f64, [f64; 4]) {
    let v = ciou_generic(Dual::<4>::var(pred[0], 0), Dual::var(pred[1], 1), Dual::var(pred[2], 2), Dual::var(pred[3], 3), gt);
    (v.v, v.d)
}

/// Clamped binary cross-entropy of `sigmoid(x)` against `y`, and its
/// derivative w.r.t. `x` (zero where the clamp is active).
pub fn bce_logit(x: f64, y: f64) -> (f64, f64) {
    let s = sigmoid(x);
    let p = s.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let loss = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    let grad = if s > BCE_EPS && s < 1.0 - BCE_EPS { s - y } else { 0.0 };
    (loss, grad)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub localization: f64,
    pub confidence: f64,
    pub classification: f64,
}

impl LossComponents {
    pub fn total(&self) -> f64 {
        self.localization + self.confidence + self.classification
    }

    pub fn add(&mut self, o: &LossComponents) {
        self.localization += o.localization;
        self.confidence += o.confidence;
        self.classification += o.classification;
    }

    pub fn scale(&self, f: f64) -> LossComponents {
        LossComponents { localization: self.localization * f, confidence: self.confidence * f, classification: self.classification * f }
    }

    pub fn is_finite(&self) -> bool {
        self.total().is_finite()
    }
}

/// Per-component gradients w.r.t. the raw grid values.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub localization: Vec<f64>,
    pub confidence: Vec<f64>,
    pub classification: Vec<f64>,
}

impl LossGrads {
    pub fn total(&self) -> Vec<f64> {
        self.localization.iter().zip(&self.confidence).zip(&self.classification).map(|((a, b), c)| a + b + c).collect()
    }
}

fn check(pred: &GridPrediction, target: &TargetTensor, anchors: &AnchorSet) -> Result<()> {
    if pred.geometry != target.geometry || pred.values.len() != pred.geometry.len() {
        return Err(DetectorError::Shape(format!("prediction {:?} vs target {:?}", pred.geometry, target.geometry)));
    }
    if anchors.len() != pred.geometry.n_anchors {
        return Err(DetectorError::Shape(format!("{} anchors for {} per cell", anchors.len(), pred.geometry.n_anchors)));
    }
    Ok(())
}

/// Sum of CIoU over assigned slots, objectness BCE over all slots and class
/// BCE over assigned slots, each returned separately with its gradient.
pub fn total_loss(pred: &GridPrediction, target: &TargetTensor, anchors: &AnchorSet) -> Result<(LossComponents, LossGrads)> {
    check(pred, target, anchors)?;
    let g = pred.geometry;
    let n = pred.values.len();
    let slot_len = g.slot_len();
    let mut grads = LossGrads { localization: vec![0.0; n], confidence: vec![0.0; n], classification: vec![0.0; n] };
    let mut comp = LossComponents::default();

    for slot in 0..g.n_slots() {
        let (l, d) = bce_logit(pred.slot(slot)[SLOT_CONF], target.objectness[slot] as f64);
        comp.confidence += l;
        grads.confidence[slot * slot_len + SLOT_CONF] = d;
    }

    let stride = g.stride as f64;
    for a in &target.assigned {
        let v = pred.slot(a.slot);
        let base = a.slot * slot_len;
        for c in 0..g.n_classes {
            let y = if c == a.class_id { 1.0 } else { 0.0 };
            let (l, d) = bce_logit(v[SLOT_CLASS0 + c], y);
            comp.classification += l;
            grads.classification[base + SLOT_CLASS0 + c] = d;
        }
        let (row, col, anchor) = g.slot_coords(a.slot);
        let (aw, ah) = anchors.get(anchor);
        let tx = Dual::<4>::var(v[SLOT_TX], 0);
        let ty = Dual::<4>::var(v[SLOT_TY], 1);
        let tw = Dual::<4>::var(v[SLOT_TW], 2);
        let th = Dual::<4>::var(v[SLOT_TH], 3);
        let clamp = |t: Dual<4>| {
            if t.v.abs() > MAX_SIZE_LOGIT {
                Dual::cst(t.v.signum() * MAX_SIZE_LOGIT)
            } else {
                t
            }
        };
        let bx = (tx.sigmoid() + Dual::cst(col as f64)) * Dual::cst(stride);
        let by = (ty.sigmoid() + Dual::cst(row as f64)) * Dual::cst(stride);
        let bw = Dual::cst(aw) * clamp(tw).exp();
        let bh = Dual::cst(ah) * clamp(th).exp();
        let l = ciou_generic(bx, by, bw, bh, &a.bbox);
        comp.localization += l.v;
        grads.localization[base..base + 4].copy_from_slice(&l.d);
    }
    Ok((comp, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_concentric() {
        let a = BBox::from_center_size(10.0, 12.0, 4.0, 6.0);
        assert_eq!(ciou_loss(&a, &a), 0.0);
        let small = BBox::from_center_size(10.0, 10.0, 2.0, 4.0);
        let big = BBox::from_center_size(10.0, 10.0, 4.0, 8.0);
        assert_eq!(ciou_loss(&small, &big), 0.75);
        assert_eq!(ciou_loss(&big, &small), 0.75);
    }

    #[test]
    fn degenerate_prediction_is_finite() {
        let gt = BBox::from_center_size(10.0, 10.0, 4.0, 4.0);
        let (l, g) = ciou_loss_grad([10.0, 10.0, 0.0, 0.0], &gt);
        assert!(l.is_finite() && g.iter().all(|v| v.is_finite()));
        assert!(l > 0.0);
    }

    #[test]
    fn bce_clamps() {
        let (l, d) = bce_logit(-60.0, 0.0);
        assert!((l - -(1.0 - BCE_EPS).ln()).abs() < 1e-18);
        assert_eq!(d, 0.0);
        let (l, d) = bce_logit(0.0, 1.0);
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert_eq!(d, -0.5);
    }
}
