use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::postprocess::DetectionRecord;

pub const DEFAULT_GATE_PX: f64 = 20.0;
pub const DEFAULT_MAX_GAP: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Largest center displacement accepted between linked samples.
    pub gate_px: f64,
    /// Consecutive frames a trajectory may miss before it is closed.
    pub max_gap: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { gate_px: DEFAULT_GATE_PX, max_gap: DEFAULT_MAX_GAP }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate_px > 0.0) {
            return Err(CoreError::Parameter(format!("gate_px must be positive, got {}", self.gate_px)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub conf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub object_id: usize,
    pub class_id: usize,
    pub samples: Vec<Sample>,
    /// Total missing frames between first and last sample.
    pub gap_count: usize,
}

impl Trajectory {
    pub fn first_frame(&self) -> usize {
        self.samples[0].frame
    }

    pub fn last_frame(&self) -> usize {
        self.samples[self.samples.len() - 1].frame
    }

    pub fn centers(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| (s.x, s.y)).collect()
    }

    pub fn sample_at(&self, frame: usize) -> Option<&Sample> {
        self.samples.binary_search_by_key(&frame, |s| s.frame).ok().map(|i| &self.samples[i])
    }
}

/// Links detections of one source into trajectories.
///
/// Frame by frame, open trajectories of the same class compete for the new
/// detections on center distance. Pairs are taken in ascending distance,
/// which is the same as repeatedly linking mutual nearest neighbours; ties go
/// to the older trajectory, then to the earlier detection in input order.
/// Nothing links beyond `gate_px`. Unlinked detections open trajectories and
/// a trajectory that misses more than `max_gap` consecutive frames is closed.
pub fn associate(dets: &[DetectionRecord], config: &TrackerConfig) -> Vec<Trajectory> {
    let mut by_frame: BTreeMap<usize, Vec<&DetectionRecord>> = BTreeMap::new();
    for d in dets {
        by_frame.entry(d.frame).or_default().push(d);
    }
    let mut open: Vec<Trajectory> = Vec::new();
    let mut closed: Vec<Trajectory> = Vec::new();
    let mut next_id = 0usize;

    for (&frame, frame_dets) in &by_frame {
        let (keep, stale): (Vec<_>, Vec<_>) = open.into_iter().partition(|t| frame - t.last_frame() - 1 <= config.max_gap);
        closed.extend(stale);
        open = keep;

        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, t) in open.iter().enumerate() {
            let last = t.samples[t.samples.len() - 1];
            for (di, d) in frame_dets.iter().enumerate() {
                if d.class != t.class_id {
                    continue;
                }
                let (x, y) = d.center();
                let dist = (x - last.x).hypot(y - last.y);
                if dist <= config.gate_px {
                    pairs.push((dist, ti, di));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(open[a.1].object_id.cmp(&open[b.1].object_id)).then(a.2.cmp(&b.2)));
        let mut track_used = vec![false; open.len()];
        let mut det_used = vec![false; frame_dets.len()];
        for (_, ti, di) in pairs {
            if track_used[ti] || det_used[di] {
                continue;
            }
            track_used[ti] = true;
            det_used[di] = true;
            let t = &mut open[ti];
            t.gap_count += frame - t.last_frame() - 1;
            let (x, y) = frame_dets[di].center();
            t.samples.push(Sample { frame, x, y, conf: frame_dets[di].conf });
        }
        for (di, d) in frame_dets.iter().enumerate() {
            if det_used[di] {
                continue;
            }
            let (x, y) = d.center();
            open.push(Trajectory { object_id: next_id, class_id: d.class, samples: vec![Sample { frame, x, y, conf: d.conf }], gap_count: 0 });
            next_id += 1;
        }
    }
    closed.extend(open);
    closed.sort_by_key(|t| t.object_id);
    closed
}

/// Runs [`associate`] independently per `source_id`.
pub fn associate_by_source(dets: &[DetectionRecord], config: &TrackerConfig) -> BTreeMap<String, Vec<Trajectory>> {
    let mut by_source: BTreeMap<String, Vec<DetectionRecord>> = BTreeMap::new();
    for d in dets {
        by_source.entry(d.source_id.clone()).or_default().push(d.clone());
    }
    by_source.into_iter().map(|(s, d)| (s, associate(&d, config))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame: usize, x: f64, y: f64) -> DetectionRecord {
        DetectionRecord { source_id: "v".into(), frame, class: 0, conf: 0.9, x_min: x - 3.0, y_min: y - 2.0, x_max: x + 3.0, y_max: y + 2.0 }
    }

    #[test]
    fn drifting_chain() {
        let dets: Vec<_> = (0..30).map(|f| det(f, 10.0 + 2.0 * f as f64, 40.0)).collect();
        let t = associate(&dets, &TrackerConfig { gate_px: 10.0, max_gap: 2 });
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].samples.len(), 30);
    }

    #[test]
    fn gap_closes_trajectory() {
        let mut dets: Vec<_> = (0..5).map(|f| det(f, 10.0, 10.0)).collect();
        dets.push(det(7, 10.0, 10.0));
        assert_eq!(associate(&dets, &TrackerConfig::default()).len(), 1);
        dets.push(det(11, 10.0, 10.0));
        let t = associate(&dets, &TrackerConfig::default());
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].gap_count, 2);
    }

    #[test]
    fn gate_is_respected() {
        let dets = vec![det(0, 0.0, 0.0), det(1, 25.0, 0.0)];
        assert_eq!(associate(&dets, &TrackerConfig::default()).len(), 2);
    }

    #[test]
    fn empty() {
        assert!(associate(&[], &TrackerConfig::default()).is_empty());
    }

    #[test]
    fn classes_do_not_link() {
        let mut b = det(1, 0.0, 0.0);
        b.class = 1;
        assert_eq!(associate(&[det(0, 0.0, 0.0), b], &TrackerConfig::default()).len(), 2);
    }
}
