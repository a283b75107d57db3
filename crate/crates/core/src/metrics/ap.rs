use serde::{Deserialize, Serialize};

use super::matching::{match_detections, GtBox, MatchCriterion, ScoredBox};
use crate::error::{CoreError, Result};

/// How the per-detection recall term of the AP sum is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// Recall term is the 0/1 increment at detection `i`; equals
    /// non-interpolated AP.
    #[default]
    Indicator,
    /// Recall term is cumulative recall at `i`. Kept for auditing only.
    LiteralCumulative,
}

/// Detections and ground truth of one frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameEval {
    pub dets: Vec<ScoredBox>,
    pub gts: Vec<GtBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub confidence: f64,
    pub recall: f64,
    pub precision: f64,
    pub tp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    pub n_annotations: usize,
    pub curve: Vec<CurvePoint>,
}

/// AP from ranked TP flags: `sum_i Precision(i) * Recall_term(i) / n_annotations`.
pub fn ap_from_ranked(ranked: &[(f64, bool)], n_annotations: usize, mode: ApMode) -> Result<ApResult> {
    if n_annotations == 0 {
        return Err(CoreError::Undefined("AP with zero annotations".into()));
    }
    let mut tp = 0usize;
    let mut sum = 0.0;
    let mut curve = Vec::with_capacity(ranked.len());
    for (i, &(confidence, is_tp)) in ranked.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        let precision = tp as f64 / (i + 1) as f64;
        let recall = tp as f64 / n_annotations as f64;
        sum += match mode {
            ApMode::Indicator => precision * if is_tp { 1.0 } else { 0.0 },
            ApMode::LiteralCumulative => precision * recall,
        };
        curve.push(CurvePoint { confidence, recall, precision, tp: is_tp });
    }
    Ok(ApResult { ap: sum / n_annotations as f64, n_annotations, curve })
}

/// Matches every frame, ranks all detections by confidence across the
/// dataset and evaluates AP. Only detections and ground truth of
/// `class_filter` take part when one is given.
pub fn pr_curve_and_ap(frames: &[FrameEval], criterion: &MatchCriterion, class_filter: Option<usize>, mode: ApMode) -> Result<ApResult> {
    criterion.validate()?;
    let keep = |c: usize| class_filter.map_or(true, |k| k == c);
    let mut ranked: Vec<(f64, bool, usize, usize)> = Vec::new();
    let mut n_annotations = 0usize;
    for (fi, f) in frames.iter().enumerate() {
        let dets: Vec<ScoredBox> = f.dets.iter().filter(|d| keep(d.class_id)).copied().collect();
        let gts: Vec<GtBox> = f.gts.iter().filter(|g| keep(g.class_id)).copied().collect();
        n_annotations += gts.len();
        let m = match_detections(&dets, &gts, criterion);
        ranked.extend(dets.iter().enumerate().map(|(di, d)| (d.confidence, m.det_tp[di], fi, di)));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3)));
    let flat: Vec<(f64, bool)> = ranked.iter().map(|r| (r.0, r.1)).collect();
    ap_from_ranked(&flat, n_annotations, mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let r = ap_from_ranked(&[(0.9, true), (0.8, false), (0.7, true)], 2, ApMode::Indicator).unwrap();
        assert!((r.ap - 5.0 / 6.0).abs() < 1e-15);
        let p: Vec<f64> = r.curve.iter().map(|c| c.precision).collect();
        assert_eq!(p, vec![1.0, 0.5, 2.0 / 3.0]);
    }

    #[test]
    fn literal_reading_differs() {
        let r = ap_from_ranked(&[(0.9, true), (0.8, false), (0.7, true)], 2, ApMode::LiteralCumulative).unwrap();
        // (1 * 1/2 + 1/2 * 1/2 + 2/3 * 1) / 2
        assert!((r.ap - (0.5 + 0.25 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_empty_and_undefined() {
        let all: Vec<(f64, bool)> = (0..4).map(|i| (1.0 - i as f64 * 0.1, true)).collect();
        assert_eq!(ap_from_ranked(&all, 4, ApMode::Indicator).unwrap().ap, 1.0);
        assert_eq!(ap_from_ranked(&[], 3, ApMode::Indicator).unwrap().ap, 0.0);
        assert!(ap_from_ranked(&[], 0, ApMode::Indicator).is_err());
    }
}
