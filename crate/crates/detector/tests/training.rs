use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinydet_core::ingest::AnchorSet;
use tinydet_core::synth::SceneConfig;
use tinydet_detector::data::Sample;
use tinydet_detector::model::Op;
use tinydet_detector::synthetic::{fit_anchors, render_frames, to_samples};
use tinydet_detector::train::evaluate_loss;
use tinydet_detector::{
    build_model, load_checkpoint, save_checkpoint, train, Detector, DetectorError, EpochRecord, Model, ModelConfig, ParamGroup, PhaseConfig, Tensor,
    TrainOptions, TrainSchedule,
};

fn tiny(size: usize) -> ModelConfig {
    ModelConfig { input_size: size, channel_plan: [4, 6, 8, 8], res_block_counts: [1, 1, 1], spp_pool_sizes: vec![3, 5], ..Default::default() }
}

fn corpus(n_scenes: usize, per: usize, seed: u64) -> Vec<Sample> {
    let base = SceneConfig { width: 64, height: 64, n_sperm: 3, n_impurity: 1, ..Default::default() };
    to_samples(&render_frames(&base, n_scenes, per, seed).unwrap(), 64)
}

fn schedule(e1: usize, e2: usize, patience: usize) -> TrainSchedule {
    TrainSchedule {
        phase1: PhaseConfig { batch_size: 4, epochs: e1, lr: 1e-3, freeze_backbone: true },
        phase2: PhaseConfig { batch_size: 2, epochs: e2, lr: 1e-3, freeze_backbone: false },
        patience,
        augment: true,
    }
}

fn setup() -> (Model, AnchorSet, Vec<Sample>, Vec<Sample>) {
    let train_set = corpus(2, 3, 10);
    let val = corpus(1, 2, 20);
    let anchors = fit_anchors(&train_set, 6, 0).unwrap();
    (build_model(tiny(64)).unwrap(), anchors, train_set, val)
}

fn snapshot(m: &Model, group: ParamGroup) -> Vec<f32> {
    m.params.iter().filter(|p| p.group == group).flat_map(|p| p.data.iter().copied()).collect()
}

#[test]
fn training_is_deterministic() {
    let (model, anchors, tr, val) = setup();
    let run = || {
        let mut m = model.clone();
        let out = train(&mut m, &anchors, &tr, &val, &schedule(2, 2, 10), &TrainOptions { seed: 4, dump_dir: None }, &mut |_, _| {}).unwrap();
        (out.history.iter().map(|r| (r.train, r.val_loss, r.lr)).collect::<Vec<_>>(), m.params.iter().map(|p| p.data.clone()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn frozen_backbone_is_untouched_in_phase_one() {
    let (mut model, anchors, tr, val) = setup();
    let backbone0 = snapshot(&model, ParamGroup::Backbone);
    let neck0 = snapshot(&model, ParamGroup::Neck);
    let mut max_delta = 0f32;
    let mut neck_moved = false;
    let mut backbone_moved_later = false;
    train(&mut model, &anchors, &tr, &val, &schedule(3, 1, 10), &TrainOptions::default(), &mut |r: &EpochRecord, m: &Model| {
        let b = snapshot(m, ParamGroup::Backbone);
        let delta = b.iter().zip(&backbone0).fold(0f32, |a, (x, y)| a.max((x - y).abs()));
        if r.phase == 1 {
            max_delta = max_delta.max(delta);
            neck_moved |= snapshot(m, ParamGroup::Neck) != neck0;
        } else {
            backbone_moved_later |= delta > 0.0;
        }
    })
    .unwrap();
    assert_eq!(max_delta, 0.0);
    assert!(neck_moved && backbone_moved_later);
}

#[test]
fn patience_zero_stops_at_first_non_improvement_and_restores_best() {
    let (mut model, anchors, tr, val) = setup();
    let s = TrainSchedule { phase1: PhaseConfig { lr: 5e-2, ..schedule(0, 0, 0).phase1 }, ..schedule(12, 12, 0) };
    let out = train(&mut model, &anchors, &tr, &val, &s, &TrainOptions::default(), &mut |_, _| {}).unwrap();
    let mut best = f64::INFINITY;
    for (i, r) in out.history.iter().enumerate() {
        let next_same_phase = out.history.get(i + 1).map(|n| n.phase == r.phase).unwrap_or(false);
        if r.val_loss < best {
            best = r.val_loss;
        } else {
            assert!(!next_same_phase, "epoch {} did not improve but training continued", r.epoch);
        }
    }
    assert_eq!(out.best_val_loss, best);
    let restored = evaluate_loss(&model, &anchors, &val, 8).unwrap();
    assert_eq!(restored, out.best_val_loss);
}

#[test]
fn non_finite_loss_aborts_with_dump() {
    let (mut model, anchors, tr, val) = setup();
    let head = model.params.iter_mut().rev().find(|p| p.group == ParamGroup::Head).unwrap();
    head.data[0] = f32::NAN;
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions { seed: 0, dump_dir: Some(dir.path().to_path_buf()) };
    match train(&mut model, &anchors, &tr, &val, &schedule(1, 1, 10), &opts, &mut |_, _| {}) {
        Err(DetectorError::NonFinite { phase, epoch, dump: Some(path), .. }) => {
            assert_eq!((phase, epoch), (1, 1));
            let v: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
            assert!(v.is_object());
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip() {
    let (model, anchors, tr, _) = setup();
    let det = Detector::new(model, anchors).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &det, serde_json::json!({"note": "x"})).unwrap();
    let (back, meta) = load_checkpoint(&path).unwrap();
    assert_eq!(meta["note"], "x");
    assert_eq!(back.anchors, det.anchors);
    assert_eq!(back.model.config, det.model.config);
    for (a, b) in back.model.params.iter().zip(&det.model.params) {
        assert_eq!((&a.name, &a.shape, &a.data), (&b.name, &b.shape, &b.data));
    }
    let x = Tensor::from_vec(1, 3, 64, 64, tr[0].input.clone());
    assert_eq!(back.model.forward(&x).unwrap(), det.model.forward(&x).unwrap());

    let bytes = std::fs::read(&path).unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_checkpoint(&bad).is_err());
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] ^= 1;
    std::fs::write(&bad, &wrong_magic).unwrap();
    assert!(load_checkpoint(&bad).is_err());
    std::fs::write(&bad, [bytes.as_slice(), &[0u8]].concat()).unwrap();
    assert!(load_checkpoint(&bad).is_err());
}

#[test]
fn short_overfit_reduces_loss_tenfold() {
    let tr = corpus(1, 2, 30);
    let anchors = fit_anchors(&tr, 6, 0).unwrap();
    let mut model = build_model(ModelConfig::with_input_size(64)).unwrap();
    let s = TrainSchedule {
        phase1: PhaseConfig { batch_size: 2, epochs: 0, lr: 1e-3, freeze_backbone: true },
        phase2: PhaseConfig { batch_size: 2, epochs: 60, lr: 1e-3, freeze_backbone: false },
        patience: 60,
        augment: false,
    };
    let initial = evaluate_loss(&model, &anchors, &tr, 2).unwrap();
    let out = train(&mut model, &anchors, &tr, &tr, &s, &TrainOptions::default(), &mut |_, _| {}).unwrap();
    assert!(out.best_val_loss < 0.1 * initial, "loss {initial} -> {}", out.best_val_loss);
}

/// Per-axis input interval that can influence output index `i` of `node`.
fn receptive_interval(m: &Model, node: usize, lo: i64, hi: i64) -> (i64, i64) {
    let union = |a: (i64, i64), b: (i64, i64)| (a.0.min(b.0), a.1.max(b.1));
    match &m.nodes[node].op {
        Op::Input => (lo, hi),
        Op::Conv { conv, src } => {
            let c = &m.convs[*conv];
            let (k, s, p) = (c.k as i64, c.stride as i64, c.k as i64 / 2);
            receptive_interval(m, *src, lo * s - p, hi * s - p + k - 1)
        }
        Op::Mish { src } => receptive_interval(m, *src, lo, hi),
        Op::Add { a, b } => union(receptive_interval(m, *a, lo, hi), receptive_interval(m, *b, lo, hi)),
        Op::Concat { srcs } => srcs.iter().map(|&s| receptive_interval(m, s, lo, hi)).reduce(union).unwrap(),
        Op::MaxPool { k, src } => {
            let p = *k as i64 / 2;
            receptive_interval(m, *src, lo - p, hi + p)
        }
        Op::Upsample { src } => receptive_interval(m, *src, lo.div_euclid(2), hi.div_euclid(2)),
    }
}

#[test]
fn outputs_only_depend_on_their_receptive_field() {
    // A shallow variant keeps the field well inside the 64 px input.
    let config =
        ModelConfig { input_size: 64, channel_plan: [4, 4, 4, 4], res_block_counts: [0, 0, 0], spp_pool_sizes: vec![], ..Default::default() };
    let m = build_model(config).unwrap();
    let side = m.config.grid_side();
    let fields: Vec<(i64, i64)> = (0..side as i64).map(|i| receptive_interval(&m, m.output, i, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base: Vec<f32> = (0..3 * 64 * 64).map(|_| rng.gen_range(0.0..1.0)).collect();
    let ref_out = m.forward(&Tensor::from_vec(1, 3, 64, 64, base.clone())).unwrap().remove(0);
    let (mut outside_pairs, mut changed) = (0, 0);
    for py in (0..64).step_by(3) {
        for px in (0..64).step_by(3) {
            let mut x = base.clone();
            for c in 0..3 {
                let v = &mut x[(c * 64 + py) * 64 + px];
                *v = 1.0 - *v + 0.5;
            }
            let out = m.forward(&Tensor::from_vec(1, 3, 64, 64, x)).unwrap().remove(0);
            let cells = m.config.head_channels();
            for row in 0..side {
                for col in 0..side {
                    let inside = (fields[row].0..=fields[row].1).contains(&(py as i64)) && (fields[col].0..=fields[col].1).contains(&(px as i64));
                    let base_cell = (row * side + col) * cells;
                    let diff = (0..cells).any(|j| out.values[base_cell + j] != ref_out.values[base_cell + j]);
                    if diff {
                        changed += 1;
                        assert!(inside, "pixel ({px}, {py}) changed cell ({col}, {row}) outside its field");
                    }
                    outside_pairs += usize::from(!inside);
                }
            }
        }
    }
    assert!(outside_pairs > 0, "field covers the whole input; the probe is vacuous");
    assert!(changed > 0);
}
