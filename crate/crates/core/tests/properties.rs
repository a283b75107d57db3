use proptest::prelude::*;
use tinydet_core::geometry::{diou, iou, BBox, Letterbox};
use tinydet_core::grid::{logit, sigmoid};
use tinydet_core::ingest::split::split_dataset;
use tinydet_core::metrics::{match_detections, GtBox, MatchCriterion, ScoredBox};
use tinydet_core::postprocess::{diou_nms, Detection};

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..100.0f64, 0.0..100.0f64, 0.5..40.0f64, 0.5..40.0f64).prop_map(|(x, y, w, h)| BBox::from_center_size(x, y, w, h))
}

proptest! {
    #[test]
    fn iou_symmetric_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!(diou(&a, &b) <= v + 1e-15);
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn letterbox_round_trip(w in 16u32..2000, h in 16u32..2000, b in bbox()) {
        let lb = Letterbox::new(w, h, 416);
        let back = lb.to_source(&lb.to_network(&b));
        for (x, y) in [(back.x_min, b.x_min), (back.y_min, b.y_min), (back.x_max, b.x_max), (back.y_max, b.y_max)] {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let (sw, sh) = lb.scaled_dims();
        prop_assert!(sw <= 416 && sh <= 416 && (sw == 416 || sh == 416));
    }

    #[test]
    fn logit_inverts_sigmoid(p in 1e-6..(1.0 - 1e-6f64)) {
        prop_assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
    }

    #[test]
    fn match_counts_consistent(
        dets in prop::collection::vec((bbox(), 0usize..2, 0.0..1.0f64), 0..12),
        gts in prop::collection::vec((bbox(), 0usize..2), 0..12),
    ) {
        let d: Vec<ScoredBox> = dets.iter().map(|&(bbox, class_id, confidence)| ScoredBox { bbox, class_id, confidence }).collect();
        let g: Vec<GtBox> = gts.iter().map(|&(bbox, class_id)| GtBox { bbox, class_id }).collect();
        let m = match_detections(&d, &g, &MatchCriterion::default());
        prop_assert_eq!(m.tp() + m.fn_count(), g.len());
        prop_assert_eq!(m.tp() + m.fp(), d.len());
        let mut used: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
        used.sort();
        used.dedup();
        prop_assert_eq!(used.len(), m.pairs.len());
        for &(di, gi) in &m.pairs {
            prop_assert_eq!(d[di].class_id, g[gi].class_id);
        }
    }

    #[test]
    fn nms_output_is_pairwise_compatible(boxes in prop::collection::vec((bbox(), 0usize..2, 0.0..1.0f64), 0..25)) {
        let dets: Vec<Detection> = boxes
            .iter()
            .enumerate()
            .map(|(i, &(b, class_id, confidence))| {
                let (cx, cy) = b.center();
                Detection { b_x: cx, b_y: cy, b_w: b.width(), b_h: b.height(), class_id, confidence, row: 0, col: 0, anchor: 0, provenance: i }
            })
            .collect();
        let kept = diou_nms(&dets, 0.45).unwrap();
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.class_id != b.class_id || diou(&a.bbox(), &b.bbox()) <= 0.45);
                prop_assert!(a.confidence >= b.confidence);
            }
        }
    }

    #[test]
    fn split_is_partition(n in 5usize..60, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        if let Ok(s) = split_dataset(&ids, (6, 2, 2), seed) {
            let mut all: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
            all.sort();
            let mut want = ids.clone();
            want.sort();
            prop_assert_eq!(all, want);
        }
    }
}
