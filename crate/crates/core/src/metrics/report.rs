use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::ap::{pr_curve_and_ap, ApMode, CurvePoint, FrameEval};
use super::matching::{match_detections, GtBox, MatchCriterion, ScoredBox};
use crate::error::Result;
use crate::ingest::voc::{Annotation, FrameRef, CLASS_NAMES};
use crate::postprocess::DetectionRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub name: String,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
    pub n_annotations: usize,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class: Vec<ClassAp>,
    /// Unweighted mean AP over classes with ground truth.
    pub map: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    /// Precision had no detections to divide by and was reported as 0.
    pub precision_undefined: bool,
    pub criterion: MatchCriterion,
    pub conf_threshold: f64,
    pub ap_mode: ApMode,
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn class_ap(&self, class_id: usize) -> Option<f64> {
        self.per_class.iter().find(|c| c.class_id == class_id).and_then(|c| c.ap)
    }

    /// Scalar metrics by name, for fold aggregation.
    pub fn scalar_metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for c in &self.per_class {
            if let Some(ap) = c.ap {
                m.insert(format!("ap_{}", c.name), ap);
            }
        }
        m.insert("map".into(), self.map);
        m.insert("f1".into(), self.f1);
        m.insert("precision".into(), self.precision);
        m.insert("recall".into(), self.recall);
        m
    }
}

fn class_name(c: usize) -> String {
    CLASS_NAMES.get(c).map(|s| s.to_string()).unwrap_or_else(|| format!("class{c}"))
}

/// Per-class AP over all detections plus precision/recall/F1 over those at or
/// above `conf_threshold`. Matching is always class-restricted.
pub fn report(frames: &[FrameEval], criterion: &MatchCriterion, conf_threshold: f64, n_classes: usize, ap_mode: ApMode) -> Result<MetricReport> {
    criterion.validate()?;
    let mut notes = Vec::new();
    let mut per_class = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let n_gt: usize = frames.iter().map(|f| f.gts.iter().filter(|g| g.class_id == c).count()).sum();
        if n_gt == 0 {
            notes.push(format!("class {} has no ground truth; AP not applicable and excluded from mAP", class_name(c)));
            per_class.push(ClassAp { class_id: c, name: class_name(c), ap: None, n_annotations: 0, curve: Vec::new() });
            continue;
        }
        let r = pr_curve_and_ap(frames, criterion, Some(c), ap_mode)?;
        per_class.push(ClassAp { class_id: c, name: class_name(c), ap: Some(r.ap), n_annotations: n_gt, curve: r.curve });
    }
    let applicable: Vec<f64> = per_class.iter().filter_map(|c| c.ap).collect();
    let map = if applicable.is_empty() { 0.0 } else { applicable.iter().sum::<f64>() / applicable.len() as f64 };

    let (mut tp, mut fp, mut fn_count) = (0, 0, 0);
    for f in frames {
        let dets: Vec<ScoredBox> = f.dets.iter().filter(|d| d.confidence >= conf_threshold).copied().collect();
        let m = match_detections(&dets, &f.gts, criterion);
        tp += m.tp();
        fp += m.fp();
        fn_count += m.fn_count();
    }
    let precision_undefined = tp + fp == 0;
    if precision_undefined {
        notes.push("no detections at the operating threshold; precision reported as 0".into());
    }
    let precision = if precision_undefined { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_count == 0 { 0.0 } else { tp as f64 / (tp + fn_count) as f64 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(MetricReport {
        per_class,
        map,
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_count,
        precision_undefined,
        criterion: *criterion,
        conf_threshold,
        ap_mode,
        notes,
    })
}

/// Groups detection records and annotations by frame. Frames with ground
/// truth but no detections, and the reverse, are both kept.
pub fn group_by_frame(dets: &[DetectionRecord], gts: &[Annotation]) -> Vec<(FrameRef, FrameEval)> {
    let mut map: BTreeMap<FrameRef, FrameEval> = BTreeMap::new();
    for g in gts {
        map.entry(g.frame_ref.clone()).or_default().gts.push(GtBox { bbox: g.bbox, class_id: g.class_id });
    }
    for d in dets {
        map.entry(FrameRef::new(d.source_id.clone(), d.frame)).or_default().dets.push(ScoredBox {
            bbox: d.bbox(),
            class_id: d.class,
            confidence: d.conf,
        });
    }
    map.into_iter().collect()
}

/// Frame-level TP/FP/FN labels, e.g. for overlay colouring.
pub fn label_frames(dets: &[DetectionRecord], gts: &[Annotation], criterion: &MatchCriterion) -> HashMap<FrameRef, super::MatchResult> {
    group_by_frame(dets, gts)
        .into_iter()
        .map(|(k, f)| {
            let m = match_detections(&f.dets, &f.gts, criterion);
            (k, m)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn frame(dets: &[(f64, f64, f64)], gts: &[(f64, f64)]) -> FrameEval {
        FrameEval {
            dets: dets
                .iter()
                .map(|&(x, y, c)| ScoredBox { bbox: BBox::new(x, y, x + 10.0, y + 10.0).unwrap(), class_id: 0, confidence: c })
                .collect(),
            gts: gts.iter().map(|&(x, y)| GtBox { bbox: BBox::new(x, y, x + 10.0, y + 10.0).unwrap(), class_id: 0 }).collect(),
        }
    }

    #[test]
    fn worked_three_detection_example() {
        let f = frame(&[(0.0, 0.0, 0.9), (50.0, 50.0, 0.8), (100.0, 100.0, 0.7)], &[(0.0, 0.0), (100.0, 100.0)]);
        let r = report(&[f], &MatchCriterion::default(), 0.5, 2, ApMode::Indicator).unwrap();
        assert!((r.class_ap(0).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 0.8).abs() < 1e-15);
        assert_eq!(r.class_ap(1), None);
        assert_eq!(r.map, r.class_ap(0).unwrap());
    }

    #[test]
    fn no_detections() {
        let f = frame(&[], &[(0.0, 0.0)]);
        let r = report(&[f], &MatchCriterion::default(), 0.5, 1, ApMode::Indicator).unwrap();
        assert_eq!((r.recall, r.precision, r.f1), (0.0, 0.0, 0.0));
        assert!(r.precision_undefined);
        assert_eq!(r.class_ap(0), Some(0.0));
    }

    #[test]
    fn perfect() {
        let f = frame(&[(0.0, 0.0, 0.9), (30.0, 30.0, 0.8)], &[(0.0, 0.0), (30.0, 30.0)]);
        let r = report(&[f], &MatchCriterion::default(), 0.5, 1, ApMode::Indicator).unwrap();
        assert_eq!((r.map, r.f1, r.precision, r.recall), (1.0, 1.0, 1.0, 1.0));
    }
}
