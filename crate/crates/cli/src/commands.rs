//! Subcommand implementations. Each opens a run, writes its artifacts and
//! returns a one-line JSON summary for stdout.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::{json, Value};
use tinydet_core::ingest::anchors::cluster_anchors_with_restarts;
use tinydet_core::ingest::split::k_folds;
use tinydet_core::ingest::voc::{CLASS_IMPURITY, CLASS_SPERM};
use tinydet_core::ingest::{extract_frames, filter_blurred, split_dataset, AnchorSet, DatasetSplit};
use tinydet_core::metrics::{crossval_aggregate, write_pr_curve_csv, ApMode, MatchCriterion, MetricReport, StdevConvention};
use tinydet_core::postprocess::{read_detections, write_detections, DetectionRecord, DEFAULT_CONF_THRESHOLD, DEFAULT_NMS_THRESHOLD};
use tinydet_core::synth::export::frame_stem;
use tinydet_core::synth::{generate_scene, render_degradations, write_scene, DegradationConfig, SceneConfig};
use tinydet_core::tracking::{
    compare_tracks, read_gt_tracks, to_trajectories_file, write_motility_csv, MotilityConfig, MotilityParams, MotilityThresholds, TrackerConfig,
};
use tinydet_detector::train::write_history_csv;
use tinydet_detector::{load_checkpoint, save_checkpoint, Detector, ModelConfig, PhaseConfig, TrainOptions, TrainSchedule};

use crate::cli::*;
use crate::error::CliError;
use crate::pipeline;
use crate::runs::{environment_fingerprint, Run, RunStore};
use crate::settings::Settings;

/// Everything a command needs besides its own flags.
pub struct Ctx {
    pub settings: Settings,
    pub runs: RunStore,
}

fn seed(flag: Option<u64>, ctx: &Ctx) -> u64 {
    flag.or(ctx.settings.seed).unwrap_or(0)
}

fn check_exists(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(path))
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    check_exists(path)?;
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())).into())
}

/// Output path for `name`: inside the run unless the user chose a location.
fn output(run: &mut Run, user: Option<&Path>, name: &str) -> PathBuf {
    match user {
        Some(p) => {
            run.external_artifact(p);
            p.to_path_buf()
        }
        None => run.artifact(name),
    }
}

pub fn resolve_model(flag: &ModelFlag, ctx: &Ctx) -> Result<PathBuf, CliError> {
    flag.model
        .clone()
        .or_else(|| ctx.settings.model.clone())
        .ok_or_else(|| CliError::Usage("no model: pass --model, set TINYDET_MODEL or `model` in the config file".into()))
}

pub fn load_model(path: &Path) -> anyhow::Result<Detector> {
    check_exists(path)?;
    let (det, _) = load_checkpoint(path).map_err(|e| CliError::Model(e.to_string()))?;
    Ok(det)
}

fn criterion(m: &MatchFlags, ctx: &Ctx) -> Result<MatchCriterion, CliError> {
    let d = MatchCriterion::default();
    let s = &ctx.settings;
    let c = MatchCriterion { b1: m.b1.or(s.b1).unwrap_or(d.b1), b2: m.b2.or(s.b2).unwrap_or(d.b2), r: m.r.or(s.r).unwrap_or(d.r) };
    c.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(c)
}

fn ap_mode(m: &MatchFlags) -> ApMode {
    if m.ap_literal {
        ApMode::LiteralCumulative
    } else {
        ApMode::Indicator
    }
}

fn threshold(name: &str, v: f64) -> Result<f64, CliError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(CliError::Input(format!("{name} {v} outside [0, 1]")))
    }
}

pub fn run_synth(a: &SynthArgs, ctx: &Ctx) -> anyhow::Result<Value> {
    let mut base: SceneConfig = match &a.scene_config {
        Some(p) => read_json(p)?,
        None => SceneConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $(if let Some(v) = a.$flag { base.$field = v; })* };
    }
    set!(width => width, height => height, fps => fps, duration => duration_s, n_sperm => n_sperm, n_impurity => n_impurity, noise => noise_sigma);
    let first = a.seed.or(ctx.settings.seed).unwrap_or(base.seed);
    let degrade = DegradationConfig {
        blur_frames: a.blur_frames.iter().copied().collect(),
        fringe_amplitude: a.fringe_amplitude.unwrap_or(0.0),
        ..Default::default()
    };
    let mut run = ctx.runs.begin("synth", json!({ "scene": base, "scenes": a.scenes, "degradation": degrade }))?;
    run.seed("scene", first);
    let mut sources = Vec::new();
    let mut frames = 0;
    for i in 0..a.scenes {
        let seed = first + i as u64;
        let config = SceneConfig { seed, source_id: format!("{}_{seed}", base.source_id), ..base.clone() };
        let mut out = generate_scene(&config)?;
        if !degrade.blur_frames.is_empty() || degrade.fringe_amplitude != 0.0 {
            out.frames = render_degradations(out.frames, &degrade)?;
        }
        frames += out.frames.len();
        let dir = write_scene(&a.out, &config, &out)?;
        run.external_artifact(&dir);
        sources.push(config.source_id);
    }
    let m = run.finish()?;
    Ok(json!({ "run_id": m.run_id, "out": a.out, "sources": sources, "frames": frames }))
}

pub fn run_preprocess(a: &PreprocessArgs, ctx: &Ctx) -> anyhow::Result<Value> {
    for p in &a.inputs {
        check_exists(p)?;
    }
    let mut run = ctx.runs.begin("preprocess", json!({ "inputs": a.inputs, "blur_cutoff": a.blur_cutoff, "fps": a.fps }))?;
    for p in &a.inputs {
        run.input(p)?;
    }
    let out_dir = output(&mut run, a.out.as_deref(), "frames");
    let mut rows = Vec::new();
    let (mut kept, mut removed) = (0, 0);
    for p in &a.inputs {
        let frames = extract_frames(p, a.fps).map_err(|e| CliError::Input(e.to_string()))?;
        let outcome = filter_blurred(frames, a.blur_cutoff)?;
        if outcome.all_removed() {
            log::warn!("every frame of {} fell below the blur cutoff {}", p.display(), a.blur_cutoff);
        }
        kept += outcome.kept.len();
        removed += outcome.removed;
        let mut paths = BTreeMap::new();
        for f in &outcome.kept {
            let dir = out_dir.join(&f.source_id);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!("{}.png", frame_stem(f.index)));
            f.image.save(&path)?;
            paths.insert(f.index, path);
        }
        for v in outcome.verdicts {
            rows.push(json!({
                "source_id": v.source_id,
                "index": v.index,
                "path": paths.get(&v.index),
                "otsu_value": v.otsu_value,
                "kept": v.kept,
            }));
        }
    }
    let manifest_path = run.artifact("frames.json");
    write_json(&manifest_path, &rows)?;
    let m = run.finish()?;
    Ok(json!({ "run_id": m.run_id, "frames": out_dir, "manifest": manifest_path, "kept": kept, "removed": removed }))
}

fn split_sources(split: Option<&Path>) -> anyhow::Result<Option<DatasetSplit>> {
    split.map(read_json::<DatasetSplit>).transpose()
}

pub fn run_anchors(a: &AnchorsArgs, ctx: &Ctx) -> anyhow::Result<Value> {
    check_exists(&a.data)?;
    let seed = seed(a.seed, ctx);
    let mut run = ctx.runs.begin("anchors", json!({ "data": a.data, "split": a.split, "size": a.size, "k": a.k, "restarts": a.restarts }))?;
    run.input(&a.data)?;
    run.seed("kmeans", seed);
    let split = split_sources(a.split.as_deref())?;
    let samples = pipeline::load_samples(&a.data, split.as_ref().map(|s| s.train.as_slice()), a.size)?;
    let anchors = cluster_anchors_with_restarts(&pipeline::box_sizes(&samples), a.k, seed, a.restarts)?;
    let path = output(&mut run, a.out.as_deref(), "anchors.json");
    write_json(&path, &anchors)?;
    let m = run.finish()?;
    Ok(json!({ "run_id": m.run_id, "anchors": anchors, "path": path }))
}

fn parse_ratio(s: &str) -> Result<(u32, u32, u32), CliError> {
    let parts: Vec<u32> =
        s.split(':').map(|p| p.trim().parse()).collect::<Result<_, _>>().map_err(|_| CliError::Usage(format!("ratio {s:?} is not a:b:c")))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(CliError::Usage(format!("ratio {s:?} is not a:b:c"))),
    }
}

pub fn run_split(a: &SplitArgs, ctx: &Ctx) -> anyhow::Result<Value> {
    let ratio = parse_ratio(&a.ratio)?;
    let seed = seed(a.seed, ctx);
    let sources = pipeline::annotated_sources(&a.data)?;
    let mut run = ctx.runs.begin("split", json!({ "data": a.data, "ratio": ratio }))?;
    run.input(&a.data)?;
    run.seed("split", seed);
    let split = split_dataset(&sources, ratio, seed)?;
    let path = output(&mut run, a.out.as_deref(), "split.json");
    write_json(&path, &split)?;
    let m = run.finish()?;
    Ok(json!({ "run_id": m.run_id, "split": split, "path": path }))
}

fn schedule(t: &TrainingFlags) -> TrainSchedule {
    TrainSchedule {
        phase1: PhaseConfig { batch_size: t.batch1, epochs: t.epochs1, lr: t.lr1, freeze_backbone: true },
        phase2: PhaseConfig { batch_size: t.batch2, epochs: t.epochs2, lr: t.lr2, freeze_backbone: false },
        patience: t.patience,
        augment: !t.no_augment,
    }
}

/// Shared by `train` and each `crossval` fold: trains, writes the checkpoint
/// and history into the run and records results.
fn train_into_run(
    run: &mut Run,
    prefix: &str,
    t: &TrainingFlags,
    seed: u64,
    anchors: AnchorSet,
    train_set: &[tinydet_detector::data::Sample],
    val_set: &[tinydet_detector::data::Sample],
) -> anyhow::Result<Detector> {
    let config = ModelConfig::with_input_size(t.size);
    config.validate().map_err(|e| CliError::Input(e.to_string()))?;
    let dump = run.dir.join(format!("{prefix}dumps"));
    let opts = TrainOptions { seed, dump_dir: Some(dump) };
    let trained = pipeline::train_detector(config, anchors, train_set, val_set, &schedule(t), &opts, &mut |_, _| {})?;
    let history = run.artifact(&format!("{prefix}history.csv"));
    write_history_csv(BufWriter::new(File::create(&history)?), &trained.outcome.history)?;
    let ckpt = run.artifact(&format!("{prefix}model.tdw"));
    let meta = json!({ "run_id": run.id, "best_epoch": trained.outcome.best_epoch, "best_val_loss": trained.outcome.best_val_loss });
    save_checkpoint(&ckpt, &trained.detector, meta)?;
    run.result(
        &format!("{prefix}training"),
        json!({
            "best_val_loss": trained.outcome.best_val_loss,
            "best_epoch": trained.outcome.best_epoch,
            "stopped_early": trained.outcome.stopped_early,
            "epochs_run": trained.outcome.history.len(),
        }),
    );
    Ok(trained.detector)
}

fn record_environment(run: &mut Run) {
    run.result("environment", environment_fingerprint());
    // Single-threaded kernels with fixed reduction order.
    run.result("determinism", json!({ "loss_curve_tolerance": 0.0, "note": "same seed and data reproduce the history bit for bit" }));
}

pub fn run_train(a: &TrainArgs, ctx: &Ctx) -> anyhow::Result<Value> {
    let t = &a.training;
    let seed = seed(t.seed, ctx);
    let sources = pipeline::annotated_sources(&a.data)?;
    let mut run =
        ctx.runs.begin("train", json!({ "data": a.data, "split": a.split, "anchors": a.anchors, "schedule": schedule(t), "size": t.size }))?;
    run.input(&a.data)?;
    run.seed("train", seed);
    let split = match split_sources(a.split.as_deref())? {
        Some(s) => {
            run.input(a.split.as_deref().expect("split path"))?;
            s
        }
        None => {
            run.seed("split", seed);
            split_dataset(&sources, tinydet_core::ingest::split::DEFAULT_RATIO, seed)?
        }
    };
    write_json(&run.artifact("split.json"), &split)?;
    let train_set = pipeline::load_samples(&a.data, Some(&split.train), t.size)?;
    let val_set = pipeline::load_samples(&a.data, Some(&split.val), t.size)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CliError::Input("training and validation splits need annotated frames".into()).into());
    }
    let anchors = match &a.anchors {
        Some(p) => {
            run.input(p)?;
            read_json(p)?
        }
        None => {
            run.seed("kmeans", seed);
            cluster_anchors_with_restarts(&pipeline::box_sizes(&train_set), tinydet_core::ingest::DEFAULT_ANCHOR_COUNT, seed, 10)?
        }
    };
    write_json(&run.artifact("anchors.json"), &anchors)?;
    let det = train_into_run(&mut run, "", t, seed, anchors, &train_set, &val_set)?;
    let tp = pipeline::measure_fps(&det, 416, t.fps_frames)?;
    run.result("throughput", tp);
    record_environment(&mut run);
    let m = run.finish()?;
    let ckpt = ctx.runs.root().join(&m.run_id).join("model.tdw");
    Ok(json!({ "run_id": m.run_id, "model": ckpt, "fps_416": tp.fps, "results": m.results["training"] }))
}

pub fn run_detect(a: &DetectArgs, ctx: &Ctx) -> anyhow::Result<Value> {
    let model_path = resolve_model(&a.model, ctx)?;
    let conf = threshold("conf", a.conf.or(ctx.settings.conf).unwrap_or(DEFAULT_CONF_THRESHOLD))?;
    let nms = threshold("nms_iou", a.nms_iou.or(ctx.settings.nms_iou).unwrap_or(DEFAULT_NMS_THRESHOLD))?;
    for p in &a.inputs {
        check_exists(p)?;
    }
    let det = load_model(&model_path)?;
    let mut run = ctx.runs.begin("detect", json!({ "model": model_path, "inputs": a.inputs, "conf": conf, "nms_iou": nms }))?;
    run.input(&model_path)?;
    let mut records = Vec::new();
    let mut frames = 0;
    for p in &a.inputs {
        run.input(p)?;
        let fs = crate::media::media_frames(p)?;
        frames += fs.len();
        records.extend(pipeline::detect_frames(&det, &fs, conf, nms)?);
    }
    let path = output(&mut run, a.out.as_deref(), "detections.jsonl");
    write_detections(BufWriter::new(File::create(&path)?), &records)?;
    let m = run.finish()?;
    Ok(json!({ "run_id": m.run_id, "detections": path, "frames": frames, "count": records.len() }))
}

fn read_records(path: &Path) -> anyhow::Result<Vec<DetectionRecord>> {
    check_exists(path)?;
    read_detections(BufReader::new(File::open(path)?)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())).into())
}

fn write_report(run: &mut Run, prefix: &str, report: &MetricReport) -> anyhow::Result<()> {
    write_json(&run.artifact(&format!("{prefix}report.json")), report)?;
    write_pr_curve_csv(BufWriter::new(File::create(run.artifact(&format!("{prefix}pr_curve.csv")))?), report)?;
    Ok(())
}

fn report_summary(r: &MetricReport) -> Value {
    json!({
        "ap": r.per_class.iter().map(|c| (c.name.clone(), c.ap)).collect::<BTreeMap<_, _>>(),
        "map": r.map,
        "precision": r.precision,
        "recall": r.recall,
        "f1": r.f1,
        "tp": r.tp,
        "fp": r.fp,
        "fn": r.fn_count,
    })
}

pub fn run_eval(a: &EvalArgs, ctx: &Ctx) -> anyhow::Result<Value> {
    let crit = criterion(&a.matching, ctx)?;
    let conf = threshold("conf", a.matching.conf.or(ctx.settings.conf).unwrap_or(DEFAULT_CONF_THRESHOLD))?;
    let dets = read_records(&a.detections)?;
    let gts = pipeline::load_ground_truth(&a.gt)?;
    let mut run = ctx
        .runs
        .begin("eval", json!({ "detections": a.detections, "gt": a.gt, "criterion": crit, "conf": conf, "ap_mode": ap_mode(&a.matching) }))?;
    run.input(&a.detections)?;
    run.input(&a.gt)?;
    let report = pipeline::evaluate(&dets, &gts, &crit, conf, ap_mode(&a.matching))?;
    write_report(&mut run, "", &report)?;
    run.result("summary", report_summary(&report));
    let m = run.finish()?;
    Ok(json!({ "run_id": m.run_id, "report": ctx.runs.root().join(&m.run_id).join("report.json"), "summary": m.results["summary"] }))
}

pub fn tracker_config(gate: Option<f64>, max_gap: Option<usize>, s: &Settings) -> TrackerConfig {
    let d = TrackerConfig::default();
    TrackerConfig { gate_px: gate.or(s.gate_px).unwrap_or(d.gate_px), max_gap: max_gap.or(s.max_gap).unwrap_or(d.max_gap) }
}

pub struct MotilityFlags {
    pub fps: Option<f64>,
    pub um_per_px: Option<f64>,
    pub smooth_window: Option<usize>,
    pub vap_min: Option<f64>,
    pub pr_class: Option<usize>,
}

pub fn motility_config(f: &MotilityFlags, s: &Settings) -> MotilityConfig {
    let p = MotilityParams::default();
    let t = MotilityThresholds::default();
    MotilityConfig {
        params: MotilityParams {
            fps: f.fps.or(s.fps).unwrap_or(p.fps),
            um_per_px: f.um_per_px.or(s.um_per_px),
            smooth_window: f.smooth_window.or(s.smooth_window).unwrap_or(p.smooth_window),
        },
        thresholds: MotilityThresholds { vap_min: f.vap_min.or(s.vap_min).unwrap_or(t.vap_min), ..t },
        pr_class: f.pr_class,
    }
}

pub fn run_track(a: &TrackArgs, ctx: &Ctx) -> anyhow::Result<Value> {
    let tracker = tracker_config(a.gate_px, a.max_gap, &ctx.settings);
    let pr_class = match a.pr_class {
        PrClass::Sperm => Some(CLASS_SPERM),
        PrClass::Impurity => Some(CLASS_IMPURITY),
        PrClass::All => None,
    };
    let flags = MotilityFlags { fps: a.fps, um_per_px: a.um_per_px, smooth_window: a.smooth_window, vap_min: a.vap_min, pr_class };
    let motility = motility_config(&flags, &ctx.settings);
    let mut run = ctx.runs.begin("track", json!({ "detections": a.detections, "media": a.media, "tracker": tracker, "motility": motility }))?;
    let dets = match (&a.detections, &a.media) {
        (Some(p), _) => {
            let d = read_records(p)?;
            run.input(p)?;
            d
        }
        (None, Some(media)) => {
            let model_path = resolve_model(&a.model, ctx)?;
            let det = load_model(&model_path)?;
            run.input(&model_path)?;
            run.input(media)?;
            let conf = threshold("conf", a.conf.or(ctx.settings.conf).unwrap_or(DEFAULT_CONF_THRESHOLD))?;
            let nms = threshold("nms_iou", a.nms_iou.or(ctx.settings.nms_iou).unwrap_or(DEFAULT_NMS_THRESHOLD))?;
            let frames = crate::media::media_frames(media)?;
            let records = pipeline::detect_frames(&det, &frames, conf, nms)?;
            write_detections(BufWriter::new(File::create(run.artifact("detections.jsonl"))?), &records)?;
            records
        }
        (None, None) => return Err(CliError::Usage("track needs --detections or --media".into()).into()),
    };
    let tracks = pipeline::track(&dets, &tracker, &motility)?;
    let files: BTreeMap<&String, _> = tracks.iter().map(|(s, t)| (s, to_trajectories_file(&t.trajectories))).collect();
    write_json(&run.artifact("trajectories.json"), &files)?;
    let reports: BTreeMap<&String, _> = tracks.iter().map(|(s, t)| (s, &t.motility)).collect();
    write_json(&run.artifact("motility.json"), &reports)?;
    for (source, t) in &tracks {
        let path = run.artifact(&format!("motility_{source}.csv"));
        write_motility_csv(BufWriter::new(File::create(path)?), &t.motility)?;
    }
    let mut summary = json!(tracks
        .iter()
        .map(|(s, t)| (s.clone(), json!({ "trajectories": t.trajectories.len(), "pr": t.motility.pr, "unit": t.motility.unit })))
        .collect::<BTreeMap<_, _>>());
    if let Some(gt_path) = &a.gt_tracks {
        run.input(gt_path)?;
        let gt = read_gt_tracks(gt_path)?;
        let source = a
            .gt_source
            .clone()
            .or_else(|| gt_path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()).map(String::from))
            .ok_or_else(|| CliError::Usage("--gt-source is required for this ground-truth path".into()))?;
        let trajectories = tracks.get(&source).map(|t| t.trajectories.clone()).unwrap_or_default();
        let cmp = compare_tracks(&trajectories, &gt, a.match_radius, &motility.params)?;
        write_json(&run.artifact("comparison.json"), &cmp)?;
        summary["comparison"] = json!({ "source": source, "id_switches": cmp.id_switches, "one_to_one": cmp.one_to_one });
    }
    run.result("summary", &summary);
    let m = run.finish()?;
    Ok(json!({ "run_id": m.run_id, "summary": summary }))
}

fn stdev(s: Stdev) -> StdevConvention {
    match s {
        Stdev::Population => StdevConvention::Population,
        Stdev::Sample => StdevConvention::Sample,
    }
}

pub fn run_crossval(a: &CrossvalArgs, ctx: &Ctx) -> anyhow::Result<Value> {
    let convention = stdev(a.stdev);
    if !a.reports.is_empty() {
        let mut run = ctx.runs.begin("crossval", json!({ "reports": a.reports, "stdev": convention }))?;
        let mut reports = Vec::new();
        for p in &a.reports {
            run.input(p)?;
            reports.push(read_json::<MetricReport>(p)?);
        }
        let summary = crossval_aggregate(&reports, convention)?;
        write_json(&run.artifact("aggregate.json"), &summary)?;
        let m = run.finish()?;
        return Ok(json!({ "run_id": m.run_id, "aggregate": summary }));
    }
    let data = a.data.as_deref().ok_or_else(|| CliError::Usage("crossval needs --data or --reports".into()))?;
    let crit = criterion(&a.matching, ctx)?;
    let conf = threshold("conf", a.matching.conf.or(ctx.settings.conf).unwrap_or(DEFAULT_CONF_THRESHOLD))?;
    let det_conf = threshold("det_conf", a.det_conf)?;
    let nms = threshold("nms_iou", a.nms_iou.or(ctx.settings.nms_iou).unwrap_or(DEFAULT_NMS_THRESHOLD))?;
    let t = &a.training;
    let seed = seed(t.seed, ctx);
    let sources = pipeline::annotated_sources(data)?;
    if a.k < 2 || sources.len() < a.k + 1 {
        return Err(CliError::Input(format!("{}-fold cross-validation needs at least {} sources, found {}", a.k, a.k + 1, sources.len())).into());
    }
    let folds = k_folds(&sources, a.k, seed)?;
    let mut run = ctx.runs.begin("crossval", json!({ "data": data, "k": a.k, "schedule": schedule(t), "size": t.size, "criterion": crit, "conf": conf, "det_conf": det_conf, "nms_iou": nms, "stdev": convention }))?;
    run.input(data)?;
    run.seed("folds", seed);
    run.seed("train", seed);
    write_json(&run.artifact("folds.json"), &folds)?;
    let gts = pipeline::load_ground_truth(data)?;
    let mut reports = Vec::new();
    for (i, test) in folds.iter().enumerate() {
        // The next fold validates; the rest train.
        let val = &folds[(i + 1) % a.k];
        let train: Vec<String> = folds.iter().enumerate().filter(|(j, _)| *j != i && *j != (i + 1) % a.k).flat_map(|(_, f)| f.clone()).collect();
        let train_set = pipeline::load_samples(data, Some(&train), t.size)?;
        let val_set = pipeline::load_samples(data, Some(val), t.size)?;
        let anchors = cluster_anchors_with_restarts(&pipeline::box_sizes(&train_set), tinydet_core::ingest::DEFAULT_ANCHOR_COUNT, seed, 10)?;
        let prefix = format!("fold{i}_");
        let det = train_into_run(&mut run, &prefix, t, seed, anchors, &train_set, &val_set)?;
        let mut dets = Vec::new();
        for src in test {
            let frames = crate::media::media_frames(&data.join(src))?;
            dets.extend(pipeline::detect_frames(&det, &frames, det_conf, nms)?);
        }
        let test_gts: Vec<_> = gts.iter().filter(|g| test.contains(&g.frame_ref.source_id)).cloned().collect();
        let report = pipeline::evaluate(&dets, &test_gts, &crit, conf, ap_mode(&a.matching))?;
        write_report(&mut run, &prefix, &report)?;
        log::info!("fold {i}: mAP {:.4}", report.map);
        reports.push(report);
    }
    let summary = crossval_aggregate(&reports, convention)?;
    write_json(&run.artifact("aggregate.json"), &summary)?;
    record_environment(&mut run);
    let m = run.finish()?;
    Ok(json!({ "run_id": m.run_id, "aggregate": summary, "folds": reports.iter().map(report_summary).collect::<Vec<_>>() }))
}

pub fn run_runs(c: &RunsCommand, ctx: &Ctx) -> anyhow::Result<Value> {
    match c {
        RunsCommand::List => {
            let runs = ctx.runs.list()?;
            Ok(json!(runs
                .iter()
                .map(|m| json!({ "run_id": m.run_id, "command": m.command, "started_at": m.started_at, "artifacts": m.artifacts.len() }))
                .collect::<Vec<_>>()))
        }
        RunsCommand::Show { run_id } => Ok(serde_json::to_value(ctx.runs.get(run_id)?)?),
    }
}

/// Runs a parsed command line (everything except `serve`).
pub fn execute(cli: &Cli) -> anyhow::Result<Value> {
    let settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let runs = RunStore::new(settings.runs_dir(cli.runs_dir.as_deref()));
    let ctx = Ctx { settings, runs };
    match &cli.command {
        Command::Synth(a) => run_synth(a, &ctx),
        Command::Preprocess(a) => run_preprocess(a, &ctx),
        Command::Anchors(a) => run_anchors(a, &ctx),
        Command::Split(a) => run_split(a, &ctx),
        Command::Train(a) => run_train(a, &ctx),
        Command::Detect(a) => run_detect(a, &ctx),
        Command::Eval(a) => run_eval(a, &ctx),
        Command::Track(a) => run_track(a, &ctx),
        Command::Crossval(a) => run_crossval(a, &ctx),
        Command::Runs { command } => run_runs(command, &ctx),
        Command::Serve(_) => Err(CliError::Usage("serve runs through the binary's async entry point".into()).into()),
    }
}
