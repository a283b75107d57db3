use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinydet_core::geometry::{iou, BBox};
use tinydet_core::metrics::{
    ap_from_ranked, crossval_aggregate, match_detections, mean_std, pr_curve_and_ap, report, ApMode, FrameEval, GtBox, MatchCriterion, ScoredBox,
    StdevConvention,
};

/// Counts unit cells covered by each box on an integer lattice.
fn raster_iou(a: (i32, i32, i32, i32), b: (i32, i32, i32, i32)) -> (i64, i64) {
    let (mut inter, mut union) = (0i64, 0i64);
    let lo_x = a.0.min(b.0);
    let hi_x = a.2.max(b.2);
    let lo_y = a.1.min(b.1);
    let hi_y = a.3.max(b.3);
    for y in lo_y..hi_y {
        for x in lo_x..hi_x {
            let in_a = x >= a.0 && x < a.2 && y >= a.1 && y < a.3;
            let in_b = x >= b.0 && x < b.2 && y >= b.1 && y < b.3;
            inter += (in_a && in_b) as i64;
            union += (in_a || in_b) as i64;
        }
    }
    (inter, union)
}

fn rand_box(rng: &mut ChaCha8Rng) -> (i32, i32, i32, i32) {
    let x = rng.gen_range(0..16);
    let y = rng.gen_range(0..16);
    (x, y, x + rng.gen_range(1..15), y + rng.gen_range(1..15))
}

fn bb(b: (i32, i32, i32, i32)) -> BBox {
    BBox::new(b.0 as f64, b.1 as f64, b.2 as f64, b.3 as f64).unwrap()
}

#[test]
fn iou_equals_rasterized_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut overlapping = 0;
    for _ in 0..1000 {
        let (a, b) = (rand_box(&mut rng), rand_box(&mut rng));
        let (inter, union) = raster_iou(a, b);
        let want = inter as f64 / union as f64;
        assert_eq!(iou(&bb(a), &bb(b)), want, "{a:?} {b:?}");
        assert_eq!(iou(&bb(a), &bb(b)), iou(&bb(b), &bb(a)));
        overlapping += (inter > 0) as usize;
    }
    assert!(overlapping > 200);
    assert_eq!(raster_iou((0, 0, 10, 10), (5, 5, 15, 15)), (25, 175));
    assert_eq!(iou(&bb((0, 0, 10, 10)), &bb((5, 5, 15, 15))), 1.0 / 7.0);
}

fn sq(x: f64, y: f64) -> BBox {
    BBox::new(x, y, x + 10.0, y + 10.0).unwrap()
}

#[test]
fn relaxed_fixtures_hand_values() {
    assert!((iou(&sq(101.0, 101.0), &sq(100.0, 100.0)) - 81.0 / 119.0).abs() < 1e-15);
    assert!((iou(&sq(2.0, 2.0), &sq(0.0, 0.0)) - 64.0 / 136.0).abs() < 1e-15);
    assert!((iou(&sq(3.0, 3.0), &sq(0.0, 0.0)) - 49.0 / 151.0).abs() < 1e-15);
    let c = MatchCriterion::default();
    let label =
        |d: BBox, g: BBox| match_detections(&[ScoredBox { bbox: d, class_id: 0, confidence: 0.9 }], &[GtBox { bbox: g, class_id: 0 }], &c).det_tp[0];
    assert_eq!(
        [label(sq(101.0, 101.0), sq(100.0, 100.0)), label(sq(2.0, 2.0), sq(0.0, 0.0)), label(sq(3.0, 3.0), sq(0.0, 0.0))],
        [true, true, false]
    );
}

fn random_frame(rng: &mut ChaCha8Rng) -> FrameEval {
    let n_gt = rng.gen_range(0..8);
    let gts: Vec<GtBox> = (0..n_gt)
        .map(|_| GtBox {
            bbox: BBox::from_center_size(rng.gen_range(10.0..90.0), rng.gen_range(10.0..90.0), rng.gen_range(4.0..14.0), rng.gen_range(4.0..14.0)),
            class_id: rng.gen_range(0..2),
        })
        .collect();
    let mut dets = Vec::new();
    for g in &gts {
        if rng.gen_bool(0.8) {
            let (cx, cy) = g.bbox.center();
            dets.push(ScoredBox {
                bbox: BBox::from_center_size(
                    cx + rng.gen_range(-3.0..3.0),
                    cy + rng.gen_range(-3.0..3.0),
                    g.bbox.width() * rng.gen_range(0.8..1.2),
                    g.bbox.height() * rng.gen_range(0.8..1.2),
                ),
                class_id: if rng.gen_bool(0.9) { g.class_id } else { 1 - g.class_id },
                confidence: rng.gen_range(0.0..1.0),
            });
        }
    }
    for _ in 0..rng.gen_range(0..4) {
        dets.push(ScoredBox {
            bbox: BBox::from_center_size(rng.gen_range(10.0..90.0), rng.gen_range(10.0..90.0), rng.gen_range(4.0..14.0), rng.gen_range(4.0..14.0)),
            class_id: rng.gen_range(0..2),
            confidence: rng.gen_range(0.0..1.0),
        });
    }
    FrameEval { dets, gts }
}

/// Plain IoU >= t greedy matcher, written independently.
fn plain_matcher(f: &FrameEval, t: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..f.dets.len()).collect();
    order.sort_by(|&a, &b| f.dets[b].confidence.partial_cmp(&f.dets[a].confidence).unwrap().then(a.cmp(&b)));
    let mut taken = vec![false; f.gts.len()];
    let mut tp = vec![false; f.dets.len()];
    for i in order {
        let d = &f.dets[i];
        let mut best: Option<(usize, f64, f64)> = None;
        for (j, g) in f.gts.iter().enumerate() {
            if taken[j] || g.class_id != d.class_id {
                continue;
            }
            let o = iou(&d.bbox, &g.bbox);
            let (dc, gc) = (d.bbox.center(), g.bbox.center());
            let dist = ((dc.0 - gc.0).powi(2) + (dc.1 - gc.1).powi(2)).sqrt();
            if o >= t && best.map_or(true, |(_, bo, bd)| o > bo || (o == bo && dist < bd)) {
                best = Some((j, o, dist));
            }
        }
        if let Some((j, _, _)) = best {
            taken[j] = true;
            tp[i] = true;
        }
    }
    tp
}

#[test]
fn degenerate_criterion_is_plain_iou() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let c = MatchCriterion::new(0.5, 0.5, 0.0).unwrap();
    for _ in 0..500 {
        let f = random_frame(&mut rng);
        let m = match_detections(&f.dets, &f.gts, &c);
        assert_eq!(m.det_tp, plain_matcher(&f, 0.5));
        assert_eq!(m.tp() + m.fn_count(), f.gts.len());
        assert_eq!(m.tp() + m.fp(), f.dets.len());
        assert_eq!(m.gt_matched.iter().filter(|&&x| x).count(), m.tp());
    }
}

#[test]
fn ap_depends_only_on_confidence_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frames: Vec<FrameEval> = (0..30).map(|_| random_frame(&mut rng)).collect();
    let c = MatchCriterion::default();
    let base = pr_curve_and_ap(&frames, &c, None, ApMode::Indicator).unwrap().ap;
    for transform in [|x: f64| x * x * x, |x: f64| (5.0 * x).exp() - 3.0, |x: f64| 0.2 + 0.5 * x.sqrt()] {
        let mapped: Vec<FrameEval> = frames
            .iter()
            .map(|f| FrameEval { dets: f.dets.iter().map(|d| ScoredBox { confidence: transform(d.confidence), ..*d }).collect(), gts: f.gts.clone() })
            .collect();
        assert_eq!(pr_curve_and_ap(&mapped, &c, None, ApMode::Indicator).unwrap().ap, base);
    }
}

#[test]
fn ap_worked_example_is_five_sixths() {
    let r = ap_from_ranked(&[(0.9, true), (0.8, false), (0.7, true)], 2, ApMode::Indicator).unwrap();
    assert_eq!(r.ap, (1.0 + 2.0 / 3.0) / 2.0);
    assert!((r.ap - 5.0 / 6.0).abs() < 1e-15);
}

#[test]
fn fold_aggregation_reference_values() {
    let ap = [85.60, 84.90, 88.80, 86.37, 87.29];
    let ms = mean_std(&ap, StdevConvention::Population).unwrap();
    assert!((ms.mean - 86.59).abs() < 0.01, "{}", ms.mean);
    assert!((ms.stdev - 1.36).abs() < 0.01, "{}", ms.stdev);
    // The n - 1 form gives 1.52 instead.
    assert!((mean_std(&ap, StdevConvention::Sample).unwrap().stdev - 1.52).abs() < 0.01);
    // F1, precision and recall folds.
    for (vals, mu, sd) in [
        ([90.00, 90.11, 92.78, 91.33, 90.65], 90.97, 1.02),
        ([89.47, 92.76, 95.19, 94.12, 91.15], 92.54, 2.05),
        ([90.54, 87.61, 90.48, 88.66, 90.16], 89.49, 1.16),
    ] {
        let ms = mean_std(&vals, StdevConvention::Population).unwrap();
        assert!((ms.mean - mu).abs() < 0.01 && (ms.stdev - sd).abs() < 0.01, "{ms:?}");
    }
}

#[test]
fn crossval_over_reports() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let c = MatchCriterion::default();
    let reports: Vec<_> = (0..5)
        .map(|_| {
            let frames: Vec<FrameEval> = (0..10).map(|_| random_frame(&mut rng)).collect();
            report(&frames, &c, 0.5, 2, ApMode::Indicator).unwrap()
        })
        .collect();
    let s = crossval_aggregate(&reports, StdevConvention::Sample).unwrap();
    let maps: Vec<f64> = reports.iter().map(|r| r.map).collect();
    let by_hand = maps.iter().sum::<f64>() / 5.0;
    assert!((s.metrics["map"].mean - by_hand).abs() < 1e-12);
    for r in &reports {
        for v in [r.precision, r.recall, r.f1, r.map] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(r.precision, r.tp as f64 / (r.tp + r.fp).max(1) as f64);
    }
}
