//! Synthetic training corpora and detection scoring on them.

use image::DynamicImage;
use tinydet_core::ingest::{cluster_anchors, AnchorSet, Annotation, FrameRef};
use tinydet_core::metrics::{report, ApMode, FrameEval, GtBox, MatchCriterion, MetricReport, ScoredBox};
use tinydet_core::synth::{Scene, SceneConfig};

use crate::data::Sample;
use crate::error::Result;
use crate::inference::Detector;

/// One rendered frame with its annotations in source pixels.
#[derive(Debug, Clone)]
pub struct LabelledFrame {
    pub frame_ref: FrameRef,
    pub image: DynamicImage,
    pub annotations: Vec<Annotation>,
}

/// Renders `frames_per_scene` evenly spaced frames from each of `n_scenes`
/// scenes. Scene `i` uses seed `first_seed + i`, so disjoint seed ranges give
/// disjoint object populations.
pub fn render_frames(base: &SceneConfig, n_scenes: usize, frames_per_scene: usize, first_seed: u64) -> Result<Vec<LabelledFrame>> {
    let mut out = Vec::with_capacity(n_scenes * frames_per_scene);
    for i in 0..n_scenes {
        let seed = first_seed + i as u64;
        let config = SceneConfig { seed, source_id: format!("{}_{seed}", base.source_id), ..base.clone() };
        let scene = Scene::new(config)?;
        let n = scene.n_frames();
        let take = frames_per_scene.min(n);
        for k in 0..take {
            let index = k * n / take.max(1);
            let frame = scene.frame(index);
            out.push(LabelledFrame {
                frame_ref: FrameRef::new(frame.source_id.clone(), index),
                image: frame.image,
                annotations: scene.annotations(index),
            });
        }
    }
    Ok(out)
}

pub fn to_samples(frames: &[LabelledFrame], size: usize) -> Vec<Sample> {
    frames.iter().map(|f| Sample::new(f.frame_ref.clone(), &f.image, &f.annotations, size)).collect()
}

/// Anchors clustered from the network-pixel box sizes of `samples`.
pub fn fit_anchors(samples: &[Sample], k: usize, seed: u64) -> Result<AnchorSet> {
    let sizes: Vec<(f64, f64)> = samples.iter().flat_map(|s| s.boxes.iter().map(|b| (b.bbox.width(), b.bbox.height()))).collect();
    Ok(cluster_anchors(&sizes, k, seed)?)
}

/// Runs the detector over `frames` and scores it against their annotations.
pub fn evaluate_detector(
    detector: &Detector,
    frames: &[LabelledFrame],
    conf_threshold: f64,
    nms_threshold: f64,
    criterion: &MatchCriterion,
    report_threshold: f64,
) -> Result<MetricReport> {
    let mut evals = Vec::with_capacity(frames.len());
    for f in frames {
        let dets = detector.detect(&f.image, conf_threshold, nms_threshold)?;
        evals.push(FrameEval {
            dets: dets.iter().map(|d| ScoredBox { bbox: d.bbox(), class_id: d.class_id, confidence: d.confidence }).collect(),
            gts: f.annotations.iter().map(|a| GtBox { bbox: a.bbox, class_id: a.class_id }).collect(),
        });
    }
    let n_classes = detector.model.config.n_classes;
    Ok(report(&evals, criterion, report_threshold, n_classes, ApMode::Indicator)?)
}
