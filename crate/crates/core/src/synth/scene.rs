//! Deterministic microscopy-like scenes with exact box and trajectory ground truth.

use std::f64::consts::{PI, TAU};

use image::{DynamicImage, GrayImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::quadrature::adaptive_simpson;
use crate::error::{CoreError, Result};
use crate::geometry::BBox;
use crate::ingest::voc::{Annotation, FrameRef, CLASS_IMPURITY, CLASS_SPERM};
use crate::ingest::Frame;

/// Absolute tolerance of the arc-length integrals behind analytic velocities.
pub const ARC_LENGTH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub source_id: String,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub duration_s: f64,
    pub n_sperm: usize,
    pub n_impurity: usize,
    /// Drift speed in px/frame.
    pub speed_range: (f64, f64),
    /// Object box area in px^2.
    pub size_range: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
    pub background: f64,
    pub intensity_range: (f64, f64),
    /// Head elongation (major / minor axis) of sperm; impurities are round.
    pub aspect_range: (f64, f64),
    pub curvilinear_fraction: f64,
    pub stationary_fraction: f64,
    /// Transverse oscillation amplitude (px) and period (frames) of curvilinear tracks.
    pub amplitude_range: (f64, f64),
    pub period_range: (f64, f64),
    /// Minimum center distance between any two objects at every frame; 0 disables.
    pub min_separation: f64,
    /// Moving-average window the analytic average-path velocity refers to.
    pub vap_window: usize,
    pub um_per_px: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            source_id: "synth".into(),
            width: 128,
            height: 128,
            fps: 25.0,
            duration_s: 2.0,
            n_sperm: 6,
            n_impurity: 2,
            speed_range: (1.0, 4.0),
            size_range: (20.0, 200.0),
            noise_sigma: 3.0,
            seed: 0,
            background: 8.0,
            intensity_range: (55.0, 80.0),
            aspect_range: (1.6, 2.0),
            curvilinear_fraction: 0.4,
            stationary_fraction: 0.1,
            amplitude_range: (1.5, 3.5),
            period_range: (16.0, 32.0),
            min_separation: 0.0,
            vap_window: 5,
            um_per_px: 0.5,
        }
    }
}

impl SceneConfig {
    pub fn n_frames(&self) -> usize {
        (self.duration_s * self.fps).round().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Parameter(m));
        if self.width == 0 || self.height == 0 {
            return bad("scene dimensions must be positive".into());
        }
        if !(self.fps > 0.0) || !(self.duration_s >= 0.0) {
            return bad("fps must be positive and duration non-negative".into());
        }
        let ranges = [
            ("speed_range", self.speed_range, 0.0),
            ("size_range", self.size_range, f64::MIN_POSITIVE),
            ("intensity_range", self.intensity_range, 0.0),
            ("aspect_range", self.aspect_range, 1.0),
            ("amplitude_range", self.amplitude_range, 0.0),
            ("period_range", self.period_range, f64::MIN_POSITIVE),
        ];
        for (name, (lo, hi), floor) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= floor) {
                return bad(format!("{name} = ({lo}, {hi}) must satisfy {floor} <= lo <= hi"));
            }
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be non-negative".into());
        }
        let fr = self.curvilinear_fraction + self.stationary_fraction;
        if self.curvilinear_fraction < 0.0 || self.stationary_fraction < 0.0 || fr > 1.0 + 1e-12 {
            return bad("kinematics fractions must be non-negative and sum to at most 1".into());
        }
        if self.vap_window == 0 || self.vap_window % 2 == 0 {
            return bad("vap_window must be odd".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kinematics {
    Linear,
    Curvilinear,
    Stationary,
}

/// Center path: drift plus optional transverse sinusoid, folded into bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub origin: (f64, f64),
    /// px/frame
    pub velocity: (f64, f64),
    pub amplitude: f64,
    /// frames
    pub period: f64,
    pub phase: f64,
    pub bounds: (f64, f64, f64, f64),
}

fn fold(x: f64, lo: f64, hi: f64) -> f64 {
    let len = hi - lo;
    if len <= 0.0 {
        return lo;
    }
    let y = (x - lo).rem_euclid(2.0 * len);
    lo + if y > len { 2.0 * len - y } else { y }
}

impl Motion {
    fn normal(&self) -> (f64, f64) {
        let s = self.velocity.0.hypot(self.velocity.1);
        if s == 0.0 {
            (0.0, 0.0)
        } else {
            (-self.velocity.1 / s, self.velocity.0 / s)
        }
    }

    pub fn unfolded(&self, t: f64) -> (f64, f64) {
        self.unfolded_with_gain(t, 1.0)
    }

    fn unfolded_with_gain(&self, t: f64, gain: f64) -> (f64, f64) {
        let n = self.normal();
        let osc = gain * self.amplitude * (TAU * t / self.period + self.phase).sin();
        (self.origin.0 + self.velocity.0 * t + n.0 * osc, self.origin.1 + self.velocity.1 * t + n.1 * osc)
    }

    /// Center at time `t` (frames).
    pub fn position(&self, t: f64) -> (f64, f64) {
        let (x, y) = self.unfolded(t);
        let (x0, x1, y0, y1) = self.bounds;
        (fold(x, x0, x1), fold(y, y0, y1))
    }

    /// Speed (px/frame) of the unfolded path with the oscillation scaled by `gain`.
    fn speed_with_gain(&self, t: f64, gain: f64) -> f64 {
        let n = self.normal();
        let w = TAU / self.period;
        let dosc = gain * self.amplitude * w * (w * t + self.phase).cos();
        (self.velocity.0 + n.0 * dosc).hypot(self.velocity.1 + n.1 * dosc)
    }

    fn stays_inside(&self, n_frames: usize) -> bool {
        (0..n_frames).all(|f| {
            let u = self.unfolded(f as f64);
            let p = self.position(f as f64);
            (u.0 - p.0).abs() < 1e-12 && (u.1 - p.1).abs() < 1e-12
        })
    }
}

/// Attenuation of a sinusoid with period `period` samples under a centered
/// `window`-sample moving average.
pub fn moving_average_gain(window: usize, period: f64) -> f64 {
    let w = TAU / period;
    let half = w / 2.0;
    if half.sin().abs() < 1e-15 {
        return 1.0;
    }
    (window as f64 * half).sin() / (window as f64 * half.sin())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticVelocities {
    pub vsl: f64,
    pub vcl: f64,
    pub vap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub object_id: usize,
    pub class_id: usize,
    pub kinematics: Kinematics,
    pub motion: Motion,
    /// Semi-axes along and across the heading.
    pub semi_major: f64,
    pub semi_minor: f64,
    pub heading: f64,
    pub intensity: f64,
}

impl SceneObject {
    pub fn half_extents(&self) -> (f64, f64) {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        let (a, b) = (self.semi_major, self.semi_minor);
        ((a * a * c * c + b * b * s * s).sqrt(), (a * a * s * s + b * b * c * c).sqrt())
    }

    pub fn bbox_at(&self, t: f64) -> BBox {
        let (cx, cy) = self.motion.position(t);
        let (hx, hy) = self.half_extents();
        BBox { x_min: cx - hx, y_min: cy - hy, x_max: cx + hx, y_max: cy + hy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTrack {
    pub object_id: usize,
    pub class_id: usize,
    pub kinematics: Kinematics,
    pub centers: Vec<(f64, f64)>,
    pub boxes: Vec<BBox>,
    /// px/s
    pub velocities: AnalyticVelocities,
    pub vap_window: usize,
    /// Whether edge reflection bent the path (average-path velocity is then
    /// evaluated on the unreflected path).
    pub reflected: bool,
}

#[derive(Debug, Clone)]
pub struct SceneOutput {
    pub frames: Vec<Frame>,
    pub annotations: Vec<Vec<Annotation>>,
    pub tracks: Vec<GroundTruthTrack>,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub objects: Vec<SceneObject>,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

const MAX_PLACEMENT_ATTEMPTS: usize = 200;

impl Scene {
    /// Samples object parameters from the seed (stream 0 of the generator).
    pub fn new(config: SceneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n_frames = config.n_frames();
        let mut objects: Vec<SceneObject> = Vec::new();
        let total = config.n_sperm + config.n_impurity;
        for object_id in 0..total {
            let is_sperm = object_id < config.n_sperm;
            let mut placed = None;
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let candidate = Self::sample_object(&config, &mut rng, object_id, is_sperm, n_frames);
                let clear = config.min_separation <= 0.0
                    || objects.iter().all(|o| {
                        (0..n_frames.max(1)).all(|f| {
                            let (ax, ay) = o.motion.position(f as f64);
                            let (bx, by) = candidate.motion.position(f as f64);
                            (ax - bx).hypot(ay - by) >= config.min_separation
                        })
                    });
                if clear {
                    placed = Some(candidate);
                    break;
                }
            }
            let obj = placed
                .ok_or_else(|| CoreError::Parameter(format!("could not place object {object_id} with min_separation {}", config.min_separation)))?;
            objects.push(obj);
        }
        Ok(Self { config, objects })
    }

    fn sample_object(cfg: &SceneConfig, rng: &mut ChaCha8Rng, object_id: usize, is_sperm: bool, n_frames: usize) -> SceneObject {
        let kinematics = if !is_sperm {
            Kinematics::Stationary
        } else {
            let u: f64 = rng.gen();
            if u < cfg.stationary_fraction {
                Kinematics::Stationary
            } else if u < cfg.stationary_fraction + cfg.curvilinear_fraction {
                Kinematics::Curvilinear
            } else {
                Kinematics::Linear
            }
        };
        let area = uniform(rng, cfg.size_range);
        let aspect = if is_sperm { uniform(rng, cfg.aspect_range) } else { 1.0 };
        let semi_major = (area * aspect).sqrt() / 2.0;
        let semi_minor = semi_major / aspect;
        let intensity = uniform(rng, cfg.intensity_range);
        let direction = rng.gen_range(0.0..TAU);
        let speed = if kinematics == Kinematics::Stationary { 0.0 } else { uniform(rng, cfg.speed_range) };
        let (amplitude, period, phase) = if kinematics == Kinematics::Curvilinear {
            (uniform(rng, cfg.amplitude_range), uniform(rng, cfg.period_range), rng.gen_range(0.0..TAU))
        } else {
            (0.0, 1.0, 0.0)
        };
        let heading = if speed > 0.0 { direction } else { rng.gen_range(0.0..PI) };
        let velocity = (speed * direction.cos(), speed * direction.sin());

        let mut obj = SceneObject {
            object_id,
            class_id: if is_sperm { CLASS_SPERM } else { CLASS_IMPURITY },
            kinematics,
            motion: Motion { origin: (0.0, 0.0), velocity, amplitude, period, phase, bounds: (0.0, 0.0, 0.0, 0.0) },
            semi_major,
            semi_minor,
            heading,
            intensity,
        };
        let (hx, hy) = obj.half_extents();
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        let bounds = (hx.min(w / 2.0), (w - hx).max(w / 2.0), hy.min(h / 2.0), (h - hy).max(h / 2.0));
        obj.motion.bounds = bounds;

        // Prefer a start from which the whole path stays inside the frame.
        let span = n_frames.saturating_sub(1) as f64;
        let n = obj.motion.normal();
        let (dx, dy) = (velocity.0 * span, velocity.1 * span);
        let (ox, oy) = ((amplitude * n.0).abs(), (amplitude * n.1).abs());
        let lo_x = bounds.0 + (-dx).max(0.0) + ox;
        let hi_x = bounds.1 - dx.max(0.0) - ox;
        let lo_y = bounds.2 + (-dy).max(0.0) + oy;
        let hi_y = bounds.3 - dy.max(0.0) - oy;
        let x = if lo_x < hi_x { rng.gen_range(lo_x..hi_x) } else { uniform(rng, (bounds.0, bounds.1)) };
        let y = if lo_y < hi_y { rng.gen_range(lo_y..hi_y) } else { uniform(rng, (bounds.2, bounds.3)) };
        // Origin is placed so that position(0) == (x, y).
        let osc0 = amplitude * phase.sin();
        obj.motion.origin = (x - n.0 * osc0, y - n.1 * osc0);
        obj
    }

    pub fn n_frames(&self) -> usize {
        self.config.n_frames()
    }

    /// Analytic VSL / VCL / VAP in px/s over frames `0..n_frames`.
    pub fn analytic_velocities(&self, obj: &SceneObject) -> AnalyticVelocities {
        let n = self.n_frames();
        let fps = self.config.fps;
        if n < 2 || obj.kinematics == Kinematics::Stationary {
            return AnalyticVelocities { vsl: 0.0, vcl: 0.0, vap: 0.0 };
        }
        let span = (n - 1) as f64;
        let m = &obj.motion;
        let (p0, p1) = (m.position(0.0), m.position(span));
        let vsl = (p1.0 - p0.0).hypot(p1.1 - p0.1) / span * fps;
        let vcl = adaptive_simpson(&|t| m.speed_with_gain(t, 1.0), 0.0, span, ARC_LENGTH_TOLERANCE) / span * fps;
        let half = (self.config.vap_window / 2) as f64;
        let vap = if span > 2.0 * half {
            let gain = if obj.kinematics == Kinematics::Curvilinear { moving_average_gain(self.config.vap_window, m.period) } else { 0.0 };
            adaptive_simpson(&|t| m.speed_with_gain(t, gain), half, span - half, ARC_LENGTH_TOLERANCE) / (span - 2.0 * half) * fps
        } else {
            vsl
        };
        AnalyticVelocities { vsl, vcl, vap }
    }

    pub fn tracks(&self) -> Vec<GroundTruthTrack> {
        let n = self.n_frames();
        self.objects
            .iter()
            .map(|o| GroundTruthTrack {
                object_id: o.object_id,
                class_id: o.class_id,
                kinematics: o.kinematics,
                centers: (0..n).map(|f| o.motion.position(f as f64)).collect(),
                boxes: (0..n).map(|f| o.bbox_at(f as f64)).collect(),
                velocities: self.analytic_velocities(o),
                vap_window: self.config.vap_window,
                reflected: !o.motion.stays_inside(n),
            })
            .collect()
    }

    pub fn annotations(&self, frame: usize) -> Vec<Annotation> {
        let (w, h) = (self.config.width as f64, self.config.height as f64);
        self.objects
            .iter()
            .map(|o| Annotation {
                bbox: o.bbox_at(frame as f64).clamp_to(w, h),
                class_id: o.class_id,
                frame_ref: FrameRef::new(self.config.source_id.clone(), frame),
            })
            .collect()
    }

    /// Object intensities above background, before noise and quantization.
    pub fn render_signal(&self, frame: usize) -> Vec<f64> {
        let (w, h) = (self.config.width as usize, self.config.height as usize);
        let mut buf = vec![0.0f64; w * h];
        let t = frame as f64;
        for o in &self.objects {
            let (cx, cy) = o.motion.position(t);
            let (c, s) = (o.heading.cos(), o.heading.sin());
            let (a, b) = (o.semi_major, o.semi_minor);
            let bb = o.bbox_at(t);
            let x0 = bb.x_min.floor().max(0.0) as usize;
            let y0 = bb.y_min.floor().max(0.0) as usize;
            let x1 = (bb.x_max.ceil() as usize).min(w);
            let y1 = (bb.y_max.ceil() as usize).min(h);
            for py in y0..y1 {
                for px in x0..x1 {
                    let (dx, dy) = (px as f64 + 0.5 - cx, py as f64 + 0.5 - cy);
                    let u = (dx * c + dy * s) / a;
                    let v = (-dx * s + dy * c) / b;
                    let r2 = u * u + v * v;
                    if r2 <= 1.0 {
                        buf[py * w + px] += o.intensity * (-2.0 * r2).exp();
                    }
                }
            }
            if o.class_id == CLASS_SPERM {
                self.render_tail(o, (cx, cy), &mut buf);
            }
        }
        buf
    }

    fn tail_amplitude(&self, o: &SceneObject) -> f64 {
        // Faint: stays below the 3-sigma noise floor even after rounding.
        (0.12 * o.intensity).min(2.5 * self.config.noise_sigma - 0.5).max(0.0)
    }

    fn render_tail(&self, o: &SceneObject, (cx, cy): (f64, f64), buf: &mut [f64]) {
        let amp = self.tail_amplitude(o);
        if amp <= 0.0 {
            return;
        }
        let (w, h) = (self.config.width as usize, self.config.height as usize);
        let (c, s) = (o.heading.cos(), o.heading.sin());
        let start = o.semi_major;
        let len = 2.5 * o.semi_major;
        let reach = start + len + 2.0;
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil().max(0.0) as usize).min(w);
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil().max(0.0) as usize).min(h);
        for py in y0..y1 {
            for px in x0..x1 {
                let (dx, dy) = (px as f64 + 0.5 - cx, py as f64 + 0.5 - cy);
                let along = -(dx * c + dy * s);
                let across = -dx * s + dy * c;
                if along >= start && along <= start + len && across.abs() < 1.5 {
                    let fade = 1.0 - (along - start) / len;
                    buf[py * w + px] += amp * fade * (-across * across / 0.72).exp();
                }
            }
        }
    }

    /// Renders one frame. Noise draws come from a per-frame stream so frames
    /// can be produced independently and in any order.
    pub fn render(&self, frame: usize, with_noise: bool) -> GrayImage {
        let (w, h) = (self.config.width, self.config.height);
        let signal = self.render_signal(frame);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(frame as u64 + 1);
        let noise = (with_noise && self.config.noise_sigma > 0.0).then(|| Normal::new(0.0, self.config.noise_sigma).expect("validated sigma"));
        let data = signal
            .iter()
            .map(|&v| {
                let n = noise.as_ref().map(|d| d.sample(&mut rng)).unwrap_or(0.0);
                (self.config.background + v + n).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        GrayImage::from_raw(w, h, data).expect("sized buffer")
    }

    pub fn frame(&self, index: usize) -> Frame {
        Frame::new(self.config.source_id.clone(), index, self.config.fps, DynamicImage::ImageLuma8(self.render(index, true)))
    }
}

/// Renders a whole scene: frames, per-frame annotations and tracks.
pub fn generate_scene(config: &SceneConfig) -> Result<SceneOutput> {
    let scene = Scene::new(config.clone())?;
    let n = scene.n_frames();
    Ok(SceneOutput {
        frames: (0..n).map(|i| scene.frame(i)).collect(),
        annotations: (0..n).map(|i| scene.annotations(i)).collect(),
        tracks: scene.tracks(),
    })
}

/// Luma value a support pixel must exceed: background plus three noise sigmas.
pub fn support_threshold(config: &SceneConfig) -> f64 {
    config.background + 3.0 * config.noise_sigma
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_reflects() {
        assert_eq!(fold(5.0, 0.0, 10.0), 5.0);
        assert_eq!(fold(12.0, 0.0, 10.0), 8.0);
        assert_eq!(fold(-3.0, 0.0, 10.0), 3.0);
        assert_eq!(fold(23.0, 0.0, 10.0), 3.0);
    }

    #[test]
    fn moving_average_gain_full_period_cancels() {
        assert!(moving_average_gain(5, 5.0).abs() < 1e-12);
        assert!((moving_average_gain(1, 20.0) - 1.0).abs() < 1e-12);
        // Direct check against averaging five samples of a sinusoid.
        let p = 20.0;
        let g = moving_average_gain(5, p);
        let t = 3.3;
        let avg: f64 = (-2..=2).map(|k| (TAU * (t + k as f64) / p).sin()).sum::<f64>() / 5.0;
        assert!((avg - g * (TAU * t / p).sin()).abs() < 1e-12);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SceneConfig { size_range: (50.0, 10.0), ..Default::default() };
        assert!(generate_scene(&cfg).is_err());
        let cfg = SceneConfig { vap_window: 4, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
