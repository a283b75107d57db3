//! On-disk corpus layout shared with ingest:
//! `<root>/<source_id>/frame_NNNNN.{png,xml}`, `tracks.json`, `scene.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scene::{AnalyticVelocities, GroundTruthTrack, SceneConfig, SceneOutput};
use crate::error::Result;
use crate::ingest::voc::{write_voc, Annotation};
use crate::ingest::Frame;

pub fn frame_stem(index: usize) -> String {
    format!("frame_{index:05}")
}

/// Tracks file entry: per-frame centers plus analytic velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub class_id: usize,
    pub kinematics: super::Kinematics,
    pub frames: Vec<usize>,
    pub centers: Vec<[f64; 2]>,
    pub velocities_px_s: AnalyticVelocities,
    pub vap_window: usize,
    pub reflected: bool,
}

impl From<&GroundTruthTrack> for TrackRecord {
    fn from(t: &GroundTruthTrack) -> Self {
        Self {
            class_id: t.class_id,
            kinematics: t.kinematics,
            frames: (0..t.centers.len()).collect(),
            centers: t.centers.iter().map(|&(x, y)| [x, y]).collect(),
            velocities_px_s: t.velocities,
            vap_window: t.vap_window,
            reflected: t.reflected,
        }
    }
}

/// Object id (as string key) → track record.
pub type TracksFile = BTreeMap<String, TrackRecord>;

pub fn write_frames(dir: &Path, frames: &[Frame], annotations: &[Vec<Annotation>]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let folder = dir.file_name().and_then(|s| s.to_str()).unwrap_or("");
    let mut written = Vec::with_capacity(frames.len());
    for (frame, anns) in frames.iter().zip(annotations) {
        let stem = frame_stem(frame.index);
        let png = dir.join(format!("{stem}.png"));
        frame.image.save(&png)?;
        let depth = if frame.image.color().has_color() { 3 } else { 1 };
        write_voc(&dir.join(format!("{stem}.xml")), folder, &format!("{stem}.png"), frame.width(), frame.height(), depth, anns)?;
        written.push(png);
    }
    Ok(written)
}

/// Writes a generated scene under `root/<source_id>/`. Returns the source directory.
pub fn write_scene(root: &Path, config: &SceneConfig, output: &SceneOutput) -> Result<PathBuf> {
    let dir = root.join(&config.source_id);
    write_frames(&dir, &output.frames, &output.annotations)?;
    let tracks: TracksFile = output.tracks.iter().map(|t| (t.object_id.to_string(), TrackRecord::from(t))).collect();
    std::fs::write(dir.join("tracks.json"), serde_json::to_vec_pretty(&tracks)?)?;
    std::fs::write(dir.join("scene.json"), serde_json::to_vec_pretty(config)?)?;
    Ok(dir)
}

pub fn read_tracks(path: &Path) -> Result<TracksFile> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
