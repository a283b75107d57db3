use serde::{Deserialize, Serialize};

use super::associate::Trajectory;
use crate::error::{CoreError, Result};
use crate::ingest::voc::CLASS_SPERM;

pub const DEFAULT_SMOOTH_WINDOW: usize = 5;
pub const DEFAULT_VAP_THRESHOLD_UM_S: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VelocityUnit {
    #[serde(rename = "um/s")]
    MicronsPerSecond,
    #[serde(rename = "px/s")]
    PixelsPerSecond,
}

impl VelocityUnit {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::MicronsPerSecond => "um/s",
            Self::PixelsPerSecond => "px/s",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotilityParams {
    pub fps: f64,
    /// Without a scale every velocity stays in px/s.
    pub um_per_px: Option<f64>,
    /// Odd, centered moving-average window for the average path.
    pub smooth_window: usize,
}

impl Default for MotilityParams {
    fn default() -> Self {
        Self { fps: 25.0, um_per_px: None, smooth_window: DEFAULT_SMOOTH_WINDOW }
    }
}

impl MotilityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(CoreError::Parameter(format!("fps must be positive, got {}", self.fps)));
        }
        if let Some(s) = self.um_per_px {
            if !(s > 0.0 && s.is_finite()) {
                return Err(CoreError::Parameter(format!("um_per_px must be positive, got {s}")));
            }
        }
        if self.smooth_window == 0 || self.smooth_window % 2 == 0 {
            return Err(CoreError::Parameter(format!("smooth_window must be odd, got {}", self.smooth_window)));
        }
        Ok(())
    }

    pub fn unit(&self) -> VelocityUnit {
        if self.um_per_px.is_some() {
            VelocityUnit::MicronsPerSecond
        } else {
            VelocityUnit::PixelsPerSecond
        }
    }
}

/// A trajectory is motile when every set threshold is met. Thresholds are in
/// the report's velocity unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotilityThresholds {
    pub vap_min: f64,
    pub vsl_min: Option<f64>,
    pub vcl_min: Option<f64>,
}

impl Default for MotilityThresholds {
    fn default() -> Self {
        Self { vap_min: DEFAULT_VAP_THRESHOLD_UM_S, vsl_min: None, vcl_min: None }
    }
}

impl MotilityThresholds {
    pub fn is_motile(&self, e: &MotilityEntry) -> bool {
        e.vap >= self.vap_min && self.vsl_min.map_or(true, |t| e.vsl >= t) && self.vcl_min.map_or(true, |t| e.vcl >= t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotilityEntry {
    pub object_id: usize,
    pub class_id: usize,
    pub n_samples: usize,
    pub first_frame: usize,
    pub last_frame: usize,
    pub vsl: f64,
    pub vcl: f64,
    pub vap: f64,
    pub motile: bool,
}

fn path_length(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum()
}

/// Centered moving average over samples; only full windows are kept.
pub fn moving_average(points: &[(f64, f64)], window: usize) -> Vec<(f64, f64)> {
    if window == 0 || points.len() < window {
        return Vec::new();
    }
    points
        .windows(window)
        .map(|w| {
            let (sx, sy) = w.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
            (sx / window as f64, sy / window as f64)
        })
        .collect()
}

/// VSL, VCL and VAP of one trajectory. Elapsed time comes from frame indices
/// so gaps count. VAP is measured over the span of the smoothed path; with
/// fewer samples than the window it falls back to VSL. `motile` is left false.
pub fn motility(traj: &Trajectory, params: &MotilityParams) -> Result<MotilityEntry> {
    params.validate()?;
    let n = traj.samples.len();
    if n < 2 {
        return Err(CoreError::Undefined(format!("trajectory {} has {n} sample(s); motility needs at least 2", traj.object_id)));
    }
    let scale = params.um_per_px.unwrap_or(1.0) * params.fps;
    let pts = traj.centers();
    let (first, last) = (traj.first_frame(), traj.last_frame());
    let elapsed = (last - first) as f64;
    let (p0, p1) = (pts[0], pts[n - 1]);
    let vsl = (p1.0 - p0.0).hypot(p1.1 - p0.1) / elapsed * scale;
    let vcl = path_length(&pts) / elapsed * scale;
    let h = params.smooth_window / 2;
    let vap = if n > params.smooth_window {
        let smooth = moving_average(&pts, params.smooth_window);
        let span = (traj.samples[n - 1 - h].frame - traj.samples[h].frame) as f64;
        path_length(&smooth) / span * scale
    } else {
        vsl
    };
    Ok(MotilityEntry {
        object_id: traj.object_id,
        class_id: traj.class_id,
        n_samples: n,
        first_frame: first,
        last_frame: last,
        vsl,
        vcl,
        vap,
        motile: false,
    })
}

/// Fraction of entries meeting `thresholds`.
pub fn progressive_motility(entries: &[MotilityEntry], thresholds: &MotilityThresholds) -> Result<f64> {
    if entries.is_empty() {
        return Err(CoreError::Undefined("progressive motility of an empty trajectory set".into()));
    }
    let motile = entries.iter().filter(|e| thresholds.is_motile(e)).count();
    Ok(motile as f64 / entries.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub object_id: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotilityReport {
    pub entries: Vec<MotilityEntry>,
    pub excluded: Vec<Excluded>,
    /// `None` when no trajectory of `pr_class` remains.
    pub pr: Option<f64>,
    pub motile: usize,
    pub total: usize,
    pub pr_class: Option<usize>,
    pub unit: VelocityUnit,
    pub params: MotilityParams,
    pub thresholds: MotilityThresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotilityConfig {
    pub params: MotilityParams,
    pub thresholds: MotilityThresholds,
    /// Class counted in PR; `None` counts every trajectory.
    pub pr_class: Option<usize>,
}

impl Default for MotilityConfig {
    fn default() -> Self {
        Self { params: MotilityParams::default(), thresholds: MotilityThresholds::default(), pr_class: Some(CLASS_SPERM) }
    }
}

pub fn motility_report(trajectories: &[Trajectory], config: &MotilityConfig) -> Result<MotilityReport> {
    config.params.validate()?;
    let mut entries = Vec::new();
    let mut excluded = Vec::new();
    for t in trajectories {
        match motility(t, &config.params) {
            Ok(mut e) => {
                e.motile = config.thresholds.is_motile(&e);
                entries.push(e);
            }
            Err(CoreError::Undefined(reason)) => excluded.push(Excluded { object_id: t.object_id, reason }),
            Err(e) => return Err(e),
        }
    }
    let counted: Vec<MotilityEntry> = entries.iter().filter(|e| config.pr_class.map_or(true, |c| c == e.class_id)).copied().collect();
    let pr = progressive_motility(&counted, &config.thresholds).ok();
    Ok(MotilityReport {
        motile: counted.iter().filter(|e| e.motile).count(),
        total: counted.len(),
        entries,
        excluded,
        pr,
        pr_class: config.pr_class,
        unit: config.params.unit(),
        params: config.params,
        thresholds: config.thresholds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::associate::Sample;

    fn traj(points: &[(usize, f64, f64)]) -> Trajectory {
        Trajectory {
            object_id: 0,
            class_id: 0,
            samples: points.iter().map(|&(frame, x, y)| Sample { frame, x, y, conf: 1.0 }).collect(),
            gap_count: 0,
        }
    }

    #[test]
    fn straight_line() {
        let t = traj(&(0..20).map(|f| (f, 4.0 * f as f64, 7.0)).collect::<Vec<_>>());
        let e = motility(&t, &MotilityParams::default()).unwrap();
        for v in [e.vsl, e.vcl, e.vap] {
            assert!((v - 100.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn stationary() {
        let t = traj(&(0..10).map(|f| (f, 3.0, 3.0)).collect::<Vec<_>>());
        let e = motility(&t, &MotilityParams::default()).unwrap();
        assert_eq!((e.vsl, e.vcl, e.vap), (0.0, 0.0, 0.0));
    }

    #[test]
    fn single_sample_excluded() {
        let t = traj(&[(0, 0.0, 0.0)]);
        assert!(motility(&t, &MotilityParams::default()).is_err());
        let r = motility_report(&[t], &MotilityConfig::default()).unwrap();
        assert_eq!(r.excluded.len(), 1);
        assert_eq!(r.pr, None);
    }

    #[test]
    fn micron_scale() {
        let t = traj(&[(0, 0.0, 0.0), (1, 2.0, 0.0)]);
        let p = MotilityParams { fps: 10.0, um_per_px: Some(0.5), smooth_window: 5 };
        let e = motility(&t, &p).unwrap();
        assert_eq!(e.vsl, 10.0);
        assert_eq!(p.unit(), VelocityUnit::MicronsPerSecond);
    }

    #[test]
    fn even_window_rejected() {
        let t = traj(&[(0, 0.0, 0.0), (1, 2.0, 0.0)]);
        assert!(motility(&t, &MotilityParams { smooth_window: 4, ..Default::default() }).is_err());
    }
}
