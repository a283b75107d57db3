//! Steps shared by the CLI and the service, so both give identical results.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};
use tinydet_core::ingest::{default_class_map, load_voc_annotations, AnchorSet, Annotation, Frame};
use tinydet_core::metrics::{group_by_frame, report, ApMode, FrameEval, MatchCriterion, MetricReport};
use tinydet_core::postprocess::DetectionRecord;
use tinydet_core::tracking::{associate_by_source, motility_report, MotilityConfig, MotilityReport, TrackerConfig, Trajectory};
use tinydet_detector::data::{annotated_frames, Sample};
use tinydet_detector::{build_model, train, Detector, Model, ModelConfig, TrainOptions, TrainOutcome, TrainSchedule};

use crate::error::CliError;

pub const N_CLASSES: usize = 2;

/// Detections of one frame, in source pixels.
pub fn detect_frame(det: &Detector, frame: &Frame, conf: f64, nms_iou: f64) -> anyhow::Result<Vec<DetectionRecord>> {
    let dets = det.detect(&frame.image, conf, nms_iou)?;
    Ok(dets.iter().map(|d| DetectionRecord::from_detection(&frame.source_id, frame.index, d)).collect())
}

pub fn detect_frames(det: &Detector, frames: &[Frame], conf: f64, nms_iou: f64) -> anyhow::Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for f in frames {
        out.extend(detect_frame(det, f, conf, nms_iou)?);
    }
    Ok(out)
}

/// Every VOC annotation below `dir` whose frame image exists alongside.
pub fn load_ground_truth(dir: &Path) -> anyhow::Result<Vec<Annotation>> {
    if !dir.exists() {
        return Err(CliError::missing(dir).into());
    }
    let class_map = default_class_map();
    let mut out = Vec::new();
    for (frame_ref, _, xml) in annotated_frames(dir)? {
        out.extend(load_voc_annotations(&xml, &class_map, frame_ref)?.annotations);
    }
    Ok(out)
}

/// Scores detection records against annotations frame by frame.
pub fn evaluate(
    dets: &[DetectionRecord],
    gts: &[Annotation],
    criterion: &MatchCriterion,
    conf_threshold: f64,
    ap_mode: ApMode,
) -> anyhow::Result<MetricReport> {
    criterion.validate()?;
    let frames: Vec<FrameEval> = group_by_frame(dets, gts).into_iter().map(|(_, f)| f).collect();
    Ok(report(&frames, criterion, conf_threshold, N_CLASSES, ap_mode)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTracks {
    pub trajectories: Vec<Trajectory>,
    pub motility: MotilityReport,
}

/// Links detections into trajectories per source and measures each.
pub fn track(dets: &[DetectionRecord], tracker: &TrackerConfig, motility: &MotilityConfig) -> anyhow::Result<BTreeMap<String, SourceTracks>> {
    tracker.validate()?;
    let mut out = BTreeMap::new();
    for (source, trajectories) in associate_by_source(dets, tracker) {
        let report = motility_report(&trajectories, motility)?;
        out.insert(source, SourceTracks { trajectories, motility: report });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub input_size: usize,
    pub frames: usize,
    pub seconds: f64,
    pub fps: f64,
}

/// End-to-end frames per second (letterbox, forward, decode, NMS) of the
/// detector's weights run at `input_size` on a mid-grey microscope-sized frame.
pub fn measure_fps(det: &Detector, input_size: usize, frames: usize) -> anyhow::Result<Throughput> {
    let config = ModelConfig { input_size, ..det.model.config.clone() };
    let mut model = build_model(config)?;
    for (p, src) in model.params.iter_mut().zip(&det.model.params) {
        p.data.copy_from_slice(&src.data);
    }
    let scaled = Detector::new(model, det.anchors.scaled(input_size as f64 / det.input_size() as f64))?;
    let image = DynamicImage::ImageLuma8(GrayImage::from_pixel(640, 480, image::Luma([128])));
    scaled.detect(&image, 0.5, 0.45)?;
    let frames = frames.max(1);
    let start = Instant::now();
    for _ in 0..frames {
        scaled.detect(&image, 0.5, 0.45)?;
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(Throughput { input_size, frames, seconds, fps: frames as f64 / seconds })
}

/// Loads the annotated frames of the given sources below `dir`.
pub fn load_samples(dir: &Path, sources: Option<&[String]>, size: usize) -> anyhow::Result<Vec<Sample>> {
    let class_map = default_class_map();
    let mut out = Vec::new();
    for (frame_ref, img, xml) in annotated_frames(dir)? {
        if sources.is_some_and(|s| !s.contains(&frame_ref.source_id)) {
            continue;
        }
        let anns = load_voc_annotations(&xml, &class_map, frame_ref.clone())?.annotations;
        let image = image::open(&img).map_err(|e| CliError::Path { path: img.clone(), reason: e.to_string() })?;
        out.push(Sample::new(frame_ref, &image, &anns, size));
    }
    Ok(out)
}

/// Source ids of every annotated frame below `dir`, sorted and deduplicated.
pub fn annotated_sources(dir: &Path) -> anyhow::Result<Vec<String>> {
    if !dir.exists() {
        return Err(CliError::missing(dir).into());
    }
    let mut ids: Vec<String> = annotated_frames(dir)?.into_iter().map(|(r, _, _)| r.source_id).collect();
    ids.sort();
    ids.dedup();
    if ids.is_empty() {
        return Err(CliError::Input(format!("no annotated frames under {}", dir.display())).into());
    }
    Ok(ids)
}

pub fn box_sizes(samples: &[Sample]) -> Vec<(f64, f64)> {
    samples.iter().flat_map(|s| s.boxes.iter().map(|b| (b.bbox.width(), b.bbox.height()))).collect()
}

pub struct Trained {
    pub detector: Detector,
    pub outcome: TrainOutcome,
}

/// Builds a model for `anchors` and trains it.
pub fn train_detector(
    config: ModelConfig,
    anchors: AnchorSet,
    train_set: &[Sample],
    val_set: &[Sample],
    schedule: &TrainSchedule,
    opts: &TrainOptions,
    on_epoch: &mut dyn FnMut(&tinydet_detector::EpochRecord, &Model),
) -> anyhow::Result<Trained> {
    let mut model = tinydet_detector::build_model_seeded(config, opts.seed)?;
    let outcome = train(&mut model, &anchors, train_set, val_set, schedule, opts, on_epoch)?;
    Ok(Trained { detector: Detector::new(model, anchors)?, outcome })
}
