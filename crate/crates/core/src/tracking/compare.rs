use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::associate::{Sample, Trajectory};
use super::motility::{motility, MotilityParams};
use crate::error::Result;

/// Ground-truth track as read from a tracks JSON file. Extra fields such as
/// analytic velocities are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtTrack {
    #[serde(default)]
    pub class_id: usize,
    pub frames: Vec<usize>,
    pub centers: Vec<[f64; 2]>,
}

impl GtTrack {
    pub fn center_at(&self, frame: usize) -> Option<(f64, f64)> {
        self.frames.binary_search(&frame).ok().map(|i| (self.centers[i][0], self.centers[i][1]))
    }

    fn as_trajectory(&self, object_id: usize) -> Trajectory {
        Trajectory {
            object_id,
            class_id: self.class_id,
            samples: self.frames.iter().zip(&self.centers).map(|(&frame, c)| Sample { frame, x: c[0], y: c[1], conf: 1.0 }).collect(),
            gap_count: 0,
        }
    }
}

pub fn read_gt_tracks(path: &Path) -> Result<BTreeMap<String, GtTrack>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackMatch {
    pub gt_id: String,
    /// Trajectory covering most of the ground-truth frames.
    pub object_id: Option<usize>,
    pub coverage: f64,
    pub mean_center_error: Option<f64>,
    pub max_center_error: Option<f64>,
    /// Changes of the covering trajectory along the ground-truth track.
    pub id_switches: usize,
    /// Relative velocity errors `|est - gt| / gt` against velocities sampled
    /// from the ground-truth centers; `None` when the reference is 0.
    pub vsl_error: Option<f64>,
    pub vcl_error: Option<f64>,
    pub vap_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackComparison {
    pub matches: Vec<TrackMatch>,
    pub id_switches: usize,
    /// Trajectories never within `match_radius` of any ground truth.
    pub unmatched_trajectories: Vec<usize>,
    /// Every ground-truth track is covered by exactly one trajectory and no
    /// trajectory covers two tracks.
    pub one_to_one: bool,
}

fn rel_err(est: f64, gt: f64) -> Option<f64> {
    (gt > 0.0).then(|| (est - gt).abs() / gt)
}

/// Compares trajectories with ground-truth tracks of the same source. At each
/// frame a ground-truth center is covered by the nearest same-class sample
/// within `match_radius`.
pub fn compare_tracks(
    trajectories: &[Trajectory],
    gt: &BTreeMap<String, GtTrack>,
    match_radius: f64,
    params: &MotilityParams,
) -> Result<TrackComparison> {
    params.validate()?;
    let mut matches = Vec::new();
    let mut touched = vec![false; trajectories.len()];
    let mut owner_count: BTreeMap<usize, usize> = BTreeMap::new();
    let mut one_to_one = true;

    for (gi, (gt_id, g)) in gt.iter().enumerate() {
        let mut cover: Vec<Option<(usize, f64)>> = Vec::with_capacity(g.frames.len());
        for &frame in &g.frames {
            let (gx, gy) = g.center_at(frame).expect("frame from own list");
            let mut best: Option<(usize, f64)> = None;
            for (ti, t) in trajectories.iter().enumerate() {
                if t.class_id != g.class_id {
                    continue;
                }
                if let Some(s) = t.sample_at(frame) {
                    let d = (s.x - gx).hypot(s.y - gy);
                    if d <= match_radius && best.map_or(true, |b| d < b.1) {
                        best = Some((ti, d));
                    }
                }
            }
            if let Some((ti, _)) = best {
                touched[ti] = true;
            }
            cover.push(best);
        }
        let ids: Vec<usize> = cover.iter().flatten().map(|c| c.0).collect();
        let id_switches = ids.windows(2).filter(|w| w[0] != w[1]).count();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &i in &ids {
            *counts.entry(i).or_default() += 1;
        }
        let dominant = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&i, _)| i);
        let coverage = if g.frames.is_empty() { 0.0 } else { ids.len() as f64 / g.frames.len() as f64 };
        if counts.len() != 1 || ids.len() != g.frames.len() {
            one_to_one = false;
        }
        let mut m = TrackMatch {
            gt_id: gt_id.clone(),
            object_id: dominant.map(|i| trajectories[i].object_id),
            coverage,
            mean_center_error: None,
            max_center_error: None,
            id_switches,
            vsl_error: None,
            vcl_error: None,
            vap_error: None,
        };
        if let Some(di) = dominant {
            *owner_count.entry(di).or_default() += 1;
            let errs: Vec<f64> = cover.iter().flatten().filter(|c| c.0 == di).map(|c| c.1).collect();
            m.mean_center_error = Some(errs.iter().sum::<f64>() / errs.len() as f64);
            m.max_center_error = errs.iter().copied().reduce(f64::max);
            if let (Ok(est), Ok(reference)) = (motility(&trajectories[di], params), motility(&g.as_trajectory(gi), params)) {
                m.vsl_error = rel_err(est.vsl, reference.vsl);
                m.vcl_error = rel_err(est.vcl, reference.vcl);
                m.vap_error = rel_err(est.vap, reference.vap);
            }
        }
        matches.push(m);
    }
    if owner_count.values().any(|&c| c > 1) || owner_count.len() != trajectories.len() {
        one_to_one = false;
    }
    let unmatched_trajectories: Vec<usize> = trajectories.iter().zip(&touched).filter(|(_, &t)| !t).map(|(t, _)| t.object_id).collect();
    Ok(TrackComparison { id_switches: matches.iter().map(|m| m.id_switches).sum(), matches, unmatched_trajectories, one_to_one })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_tracks_match_one_to_one() {
        let g = GtTrack { class_id: 0, frames: (0..10).collect(), centers: (0..10).map(|f| [f as f64 * 2.0, 5.0]).collect() };
        let t = g.as_trajectory(7);
        let gt: BTreeMap<String, GtTrack> = [("0".to_string(), g)].into();
        let c = compare_tracks(&[t], &gt, 3.0, &MotilityParams::default()).unwrap();
        assert!(c.one_to_one);
        assert_eq!(c.id_switches, 0);
        assert_eq!(c.matches[0].object_id, Some(7));
        assert_eq!(c.matches[0].max_center_error, Some(0.0));
        assert_eq!(c.matches[0].vsl_error, Some(0.0));
    }
}
