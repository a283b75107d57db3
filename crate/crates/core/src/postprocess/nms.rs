use std::cmp::Ordering;

use super::Detection;
use crate::error::{CoreError, Result};
use crate::geometry::diou;

fn by_confidence(a: &Detection, b: &Detection) -> Ordering {
    b.confidence.total_cmp(&a.confidence).then(a.provenance.cmp(&b.provenance))
}

/// Greedy class-wise suppression with the distance-IoU overlap score.
///
/// Candidates are visited by descending confidence (ties by provenance); a
/// candidate is dropped when its DIoU with an already kept box of the same
/// class exceeds `overlap_threshold`.
pub fn diou_nms(dets: &[Detection], overlap_threshold: f64) -> Result<Vec<Detection>> {
    if !(overlap_threshold > 0.0 && overlap_threshold <= 1.0) {
        return Err(CoreError::Parameter(format!("NMS threshold {overlap_threshold} outside (0, 1]")));
    }
    let mut order: Vec<Detection> = dets.to_vec();
    order.sort_by(by_confidence);
    let mut kept: Vec<Detection> = Vec::with_capacity(order.len());
    for cand in order {
        let cb = cand.bbox();
        let suppressed = kept.iter().filter(|k| k.class_id == cand.class_id).any(|k| diou(&cb, &k.bbox()) > overlap_threshold);
        if !suppressed {
            kept.push(cand);
        }
    }
    Ok(kept)
}
