use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{iou, BBox};

/// Relaxed positive-sample rule: `IoU >= b1`, or `IoU >= b2` with the box
/// centers at most `r` pixels apart (Euclidean).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchCriterion {
    pub b1: f64,
    pub b2: f64,
    pub r: f64,
}

impl Default for MatchCriterion {
    fn default() -> Self {
        Self { b1: 0.5, b2: 0.45, r: 3.0 }
    }
}

impl MatchCriterion {
    pub fn new(b1: f64, b2: f64, r: f64) -> Result<Self> {
        let c = Self { b1, b2, r };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.b2 && self.b2 <= self.b1 && self.b1 < 1.0) {
            return Err(CoreError::Parameter(format!("need 0 < b2 <= b1 < 1, got b1 = {}, b2 = {}", self.b1, self.b2)));
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(CoreError::Parameter(format!("r must be a non-negative distance, got {}", self.r)));
        }
        Ok(())
    }

    pub fn accepts(&self, overlap: f64, center_distance: f64) -> bool {
        overlap >= self.b1 || (overlap >= self.b2 && center_distance <= self.r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub class_id: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub bbox: BBox,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    /// Indexed like the input detections: `true` = TP.
    pub det_tp: Vec<bool>,
    /// Indexed like the input ground truth: `true` = matched.
    pub gt_matched: Vec<bool>,
    /// `(detection index, ground-truth index)`.
    pub pairs: Vec<(usize, usize)>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.pairs.len()
    }

    pub fn fp(&self) -> usize {
        self.det_tp.len() - self.tp()
    }

    pub fn fn_count(&self) -> usize {
        self.gt_matched.len() - self.tp()
    }
}

/// Indices of `dets` by descending confidence, ties by input order.
pub fn confidence_order(dets: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    order
}

/// Greedy one-to-one matching within a frame.
///
/// Detections are taken by descending confidence; each claims the unmatched,
/// same-class ground truth with the highest IoU among those the criterion
/// accepts (ties: smaller center distance, then lower index).
pub fn match_detections(dets: &[ScoredBox], gts: &[GtBox], criterion: &MatchCriterion) -> MatchResult {
    let mut result = MatchResult { det_tp: vec![false; dets.len()], gt_matched: vec![false; gts.len()], pairs: Vec::new() };
    for di in confidence_order(dets) {
        let d = &dets[di];
        let mut best: Option<(usize, f64, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if result.gt_matched[gi] || g.class_id != d.class_id {
                continue;
            }
            let overlap = iou(&d.bbox, &g.bbox);
            let dist = d.bbox.center_distance(&g.bbox);
            if !criterion.accepts(overlap, dist) {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, bo, bd)) => overlap > bo || (overlap == bo && dist < bd),
            };
            if better {
                best = Some((gi, overlap, dist));
            }
        }
        if let Some((gi, _, _)) = best {
            result.det_tp[di] = true;
            result.gt_matched[gi] = true;
            result.pairs.push((di, gi));
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq(x: f64, y: f64) -> BBox {
        BBox::new(x, y, x + 10.0, y + 10.0).unwrap()
    }

    fn one(det: BBox, gt: BBox) -> bool {
        let r = match_detections(
            &[ScoredBox { bbox: det, class_id: 0, confidence: 0.9 }],
            &[GtBox { bbox: gt, class_id: 0 }],
            &MatchCriterion::default(),
        );
        r.det_tp[0]
    }

    #[test]
    fn relaxed_fixtures() {
        assert!(one(sq(101.0, 101.0), sq(100.0, 100.0)));
        assert!(one(sq(2.0, 2.0), sq(0.0, 0.0)));
        assert!(!one(sq(3.0, 3.0), sq(0.0, 0.0)));
    }

    #[test]
    fn class_mismatch_is_fp() {
        let r = match_detections(
            &[ScoredBox { bbox: sq(0.0, 0.0), class_id: 1, confidence: 0.9 }],
            &[GtBox { bbox: sq(0.0, 0.0), class_id: 0 }],
            &MatchCriterion::default(),
        );
        assert_eq!((r.tp(), r.fp(), r.fn_count()), (0, 1, 1));
    }

    #[test]
    fn criterion_domain() {
        assert!(MatchCriterion::new(0.4, 0.5, 3.0).is_err());
        assert!(MatchCriterion::new(0.5, 0.45, -1.0).is_err());
        assert!(MatchCriterion::new(0.5, 0.5, 0.0).is_ok());
    }
}
