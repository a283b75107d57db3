//! Optical degradations: defocus blur and interference fringes.

use std::collections::BTreeSet;

use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ingest::{otsu_threshold, Frame, DEFAULT_BLUR_CUTOFF};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    pub blur_frames: BTreeSet<usize>,
    pub fringe_amplitude: f64,
    /// Fringe wavelength in px.
    pub fringe_period: f64,
    /// Fringe orientation in radians.
    pub fringe_angle: f64,
    /// Blurred frames are smoothed until their Otsu level drops below this.
    pub blur_cutoff: u8,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self { blur_frames: BTreeSet::new(), fringe_amplitude: 0.0, fringe_period: 24.0, fringe_angle: 0.6, blur_cutoff: DEFAULT_BLUR_CUTOFF }
    }
}

const BLUR_SIGMAS: [f32; 8] = [1.5, 2.5, 4.0, 6.0, 9.0, 14.0, 20.0, 32.0];

fn add_fringes(img: &GrayImage, amplitude: f64, period: f64, angle: f64) -> GrayImage {
    let (c, s) = (angle.cos(), angle.sin());
    let k = std::f64::consts::TAU / period;
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let phase = k * (x as f64 * c + y as f64 * s);
        let v = img.get_pixel(x, y)[0] as f64 + amplitude * phase.sin();
        image::Luma([v.round().clamp(0.0, 255.0) as u8])
    })
}

/// Gaussian blur with escalating sigma until the Otsu level falls below `cutoff`.
pub fn defocus(img: &GrayImage, cutoff: u8) -> GrayImage {
    let mut out = img.clone();
    for sigma in BLUR_SIGMAS {
        out = image::imageops::blur(img, sigma);
        if otsu_threshold(&out) < cutoff {
            return out;
        }
    }
    log::warn!("defocus: Otsu level still >= {cutoff} after the strongest blur");
    out
}

/// Adds fringes to every frame (when the amplitude is non-zero) and defocuses
/// the listed frames.
pub fn render_degradations(frames: Vec<Frame>, config: &DegradationConfig) -> Result<Vec<Frame>> {
    if let Some(&bad) = config.blur_frames.iter().find(|&&i| i >= frames.len()) {
        return Err(CoreError::Parameter(format!("blur frame {bad} out of range (0..{})", frames.len())));
    }
    if !(config.fringe_period > 0.0) {
        return Err(CoreError::Parameter("fringe_period must be positive".into()));
    }
    Ok(frames
        .into_iter()
        .enumerate()
        .map(|(pos, mut frame)| {
            let blur = config.blur_frames.contains(&pos);
            if config.fringe_amplitude == 0.0 && !blur {
                return frame;
            }
            let mut gray = frame.image.to_luma8();
            if config.fringe_amplitude != 0.0 {
                gray = add_fringes(&gray, config.fringe_amplitude, config.fringe_period, config.fringe_angle);
            }
            if blur {
                gray = defocus(&gray, config.blur_cutoff);
            }
            frame.image = DynamicImage::ImageLuma8(gray);
            frame
        })
        .collect())
}
