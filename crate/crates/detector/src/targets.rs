//! Assignment of ground-truth boxes to (cell, anchor) slots and the inverse
//! of the head's box parameterisation.

use serde::{Deserialize, Serialize};
use tinydet_core::geometry::BBox;
use tinydet_core::grid::{logit, GridGeometry, GridPrediction, SLOT_CLASS0, SLOT_CONF};
use tinydet_core::ingest::AnchorSet;

use crate::error::{DetectorError, Result};

/// Keeps `sigmoid(t)` strictly inside (0, 1) for centers on a cell border.
const CELL_FRACTION_EPS: f64 = 1e-12;

/// One ground-truth box in network-input pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetBox {
    pub bbox: BBox,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedBox {
    pub slot: usize,
    /// Index into the input list.
    pub source: usize,
    pub class_id: usize,
    pub bbox: BBox,
    /// `t_x, t_y, t_w, t_h` that decode exactly to `bbox`.
    pub t: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unassigned {
    pub source: usize,
    /// The index of the box that kept the slot.
    pub displaced_by: usize,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTensor {
    pub geometry: GridGeometry,
    /// 1 on assigned slots, per flat slot index.
    pub objectness: Vec<u8>,
    /// Sorted by slot.
    pub assigned: Vec<AssignedBox>,
    pub unassigned: Vec<Unassigned>,
}

impl TargetTensor {
    pub fn empty(geometry: GridGeometry) -> Self {
        Self { geometry, objectness: vec![0; geometry.n_slots()], assigned: Vec::new(), unassigned: Vec::new() }
    }

    pub fn n_objects(&self) -> usize {
        self.assigned.len()
    }

    /// A prediction grid that decodes to exactly the target boxes: assigned
    /// slots carry the encoded offsets, objectness `+logit` and a one-hot
    /// class, all other slots objectness `-logit`.
    pub fn to_prediction(&self, logit_magnitude: f64) -> GridPrediction {
        let mut p = GridPrediction::zeros(self.geometry);
        for slot in 0..self.geometry.n_slots() {
            let v = p.slot_mut(slot);
            v[SLOT_CONF] = -logit_magnitude;
            for c in &mut v[SLOT_CLASS0..] {
                *c = -logit_magnitude;
            }
        }
        for a in &self.assigned {
            let v = p.slot_mut(a.slot);
            v[..4].copy_from_slice(&a.t);
            v[SLOT_CONF] = logit_magnitude;
            v[SLOT_CLASS0 + a.class_id] = logit_magnitude;
        }
        p
    }
}

/// Assigns each box to the cell containing its center and the anchor of
/// highest shape IoU. When two boxes claim one slot the larger keeps it and
/// the other is listed in `unassigned` with a warning.
pub fn encode_targets(boxes: &[TargetBox], anchors: &AnchorSet, geometry: GridGeometry) -> Result<TargetTensor> {
    if anchors.len() != geometry.n_anchors {
        return Err(DetectorError::Shape(format!("{} anchors for a head with {} per cell", anchors.len(), geometry.n_anchors)));
    }
    let size = geometry.input_size as f64;
    let stride = geometry.stride as f64;
    let mut owner: Vec<Option<usize>> = vec![None; geometry.n_slots()];
    let mut encoded: Vec<Option<AssignedBox>> = vec![None; boxes.len()];
    let mut unassigned = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        if b.class_id >= geometry.n_classes {
            return Err(DetectorError::Data(format!("box {i}: class {} outside 0..{}", b.class_id, geometry.n_classes)));
        }
        let (cx, cy) = b.bbox.center();
        let (w, h) = (b.bbox.width(), b.bbox.height());
        if !(w > 0.0 && h > 0.0) || !(0.0..size).contains(&cx) || !(0.0..size).contains(&cy) {
            return Err(DetectorError::Data(format!("box {i} {:?} has no area or its center lies outside the {size} px input", b.bbox)));
        }
        let col = ((cx / stride).floor() as usize).min(geometry.side - 1);
        let row = ((cy / stride).floor() as usize).min(geometry.side - 1);
        let anchor = anchors.best_match(w, h);
        let slot = geometry.slot_index(row, col, anchor);
        let (pw, ph) = anchors.get(anchor);
        let fx = (cx / stride - col as f64).clamp(CELL_FRACTION_EPS, 1.0 - CELL_FRACTION_EPS);
        let fy = (cy / stride - row as f64).clamp(CELL_FRACTION_EPS, 1.0 - CELL_FRACTION_EPS);
        let t = [logit(fx), logit(fy), (w / pw).ln(), (h / ph).ln()];
        let candidate = AssignedBox { slot, source: i, class_id: b.class_id, bbox: b.bbox, t };
        match owner[slot] {
            None => {
                owner[slot] = Some(i);
                encoded[i] = Some(candidate);
            }
            Some(j) => {
                let area = |k: usize| boxes[k].bbox.width() * boxes[k].bbox.height();
                let (keep, drop) = if area(i) > area(j) { (i, j) } else { (j, i) };
                log::warn!("boxes {j} and {i} share slot {slot} (row {row}, col {col}, anchor {anchor}); keeping the larger ({keep})");
                if keep == i {
                    encoded[j] = None;
                    encoded[i] = Some(candidate);
                    owner[slot] = Some(i);
                }
                unassigned.push(Unassigned { source: drop, displaced_by: keep, slot });
            }
        }
    }
    let mut assigned: Vec<AssignedBox> = encoded.into_iter().flatten().collect();
    assigned.sort_by_key(|a| a.slot);
    let mut objectness = vec![0u8; geometry.n_slots()];
    for a in &assigned {
        objectness[a.slot] = 1;
    }
    Ok(TargetTensor { geometry, objectness, assigned, unassigned })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchors() -> AnchorSet {
        AnchorSet::new(vec![(4.0, 6.0), (6.0, 4.0), (8.0, 8.0), (10.0, 14.0), (14.0, 10.0), (20.0, 20.0)]).unwrap()
    }

    #[test]
    fn cell_center_anchor_sized_box_encodes_to_zero() {
        let g = GridGeometry::new(64, 8, 6, 2).unwrap();
        let b = TargetBox { bbox: BBox::from_center_size(3.0 * 8.0 + 4.0, 5.0 * 8.0 + 4.0, 8.0, 8.0), class_id: 0 };
        let t = encode_targets(&[b], &anchors(), g).unwrap();
        assert_eq!(t.assigned.len(), 1);
        assert_eq!(t.assigned[0].t, [0.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.assigned[0].slot, g.slot_index(5, 3, 2));
    }

    #[test]
    fn empty_and_collision() {
        let g = GridGeometry::new(64, 8, 6, 2).unwrap();
        let t = encode_targets(&[], &anchors(), g).unwrap();
        assert!(t.objectness.iter().all(|&o| o == 0));
        let small = TargetBox { bbox: BBox::from_center_size(20.0, 20.0, 7.0, 7.0), class_id: 0 };
        let large = TargetBox { bbox: BBox::from_center_size(21.0, 21.0, 8.0, 8.0), class_id: 1 };
        let t = encode_targets(&[small, large], &anchors(), g).unwrap();
        assert_eq!(t.assigned.len(), 1);
        assert_eq!(t.assigned[0].source, 1);
        assert_eq!(t.unassigned, vec![Unassigned { source: 0, displaced_by: 1, slot: t.assigned[0].slot }]);
        let outside = TargetBox { bbox: BBox::from_center_size(70.0, 20.0, 7.0, 7.0), class_id: 0 };
        assert!(encode_targets(&[outside], &anchors(), g).is_err());
    }
}
