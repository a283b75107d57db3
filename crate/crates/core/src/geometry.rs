//! Axis-aligned boxes and the overlap measures built on them.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Axis-aligned rectangle in pixel coordinates, corners as `(x_min, y_min)`-`(x_max, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Validating constructor: requires finite corners with `x_min < x_max` and `y_min < y_max`.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self { x_min, y_min, x_max, y_max };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(CoreError::InvalidBox(format!("non-finite corner in {b:?}")));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(CoreError::InvalidBox(format!("empty extent in {b:?}")));
        }
        Ok(b)
    }

    /// Builds a box from center and size without validation.
    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { x_min: cx - w / 2.0, y_min: cy - h / 2.0, x_max: cx + w / 2.0, y_max: cy + h / 2.0 }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        (ax - bx).hypot(ay - by)
    }

    /// Clamps the box to `[0, width] x [0, height]`.
    pub fn clamp_to(&self, width: f64, height: f64) -> BBox {
        BBox {
            x_min: self.x_min.clamp(0.0, width),
            y_min: self.y_min.clamp(0.0, height),
            x_max: self.x_max.clamp(0.0, width),
            y_max: self.y_max.clamp(0.0, height),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.width() > 0.0 && self.height() > 0.0)
    }

    /// Smallest box enclosing both.
    pub fn enclosing(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }
}

/// Intersection over union, evaluated in the extent/deficit form
///
/// `IoU = (Gx - kx)(Gy - ky) / (Gx Gy + Px Py - (Gx - kx)(Gy - ky))`
///
/// where `Gx, Gy` are the extents of `a`, `Px, Py` those of `b` and `kx, ky`
/// how far the overlap falls short of `a` along each axis. `Gx - kx` is the
/// overlap extent itself, which is what gets multiplied so the result is
/// exactly symmetric in its arguments. Zero-area inputs yield 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (gx, gy) = (a.width(), a.height());
    let (px, py) = (b.width(), b.height());
    if !(gx > 0.0 && gy > 0.0 && px > 0.0 && py > 0.0) {
        log::warn!("iou on zero-area box ({a:?}, {b:?}); defined as 0");
        return 0.0;
    }
    let overlap_x = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let overlap_y = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = overlap_x * overlap_y;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (gx * gy + px * py - inter)
}

/// Distance-IoU: `IoU - rho^2 / c^2`, with `rho` the center distance and `c`
/// the diagonal of the smallest enclosing box.
pub fn diou(a: &BBox, b: &BBox) -> f64 {
    let plain = iou(a, b);
    let enc = a.enclosing(b);
    let c2 = enc.width().powi(2) + enc.height().powi(2);
    if c2 <= 0.0 {
        return plain;
    }
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let rho2 = (ax - bx).powi(2) + (ay - by).powi(2);
    plain - rho2 / c2
}

/// Aspect-preserving resize with centered padding onto a square canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Letterbox {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
    pub src_width: u32,
    pub src_height: u32,
    pub size: u32,
}

impl Letterbox {
    pub fn new(src_width: u32, src_height: u32, size: u32) -> Self {
        let scale = (size as f64 / src_width as f64).min(size as f64 / src_height as f64);
        let new_w = (src_width as f64 * scale).round();
        let new_h = (src_height as f64 * scale).round();
        Self { scale, pad_x: ((size as f64 - new_w) / 2.0).floor(), pad_y: ((size as f64 - new_h) / 2.0).floor(), src_width, src_height, size }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.pad_x == 0.0 && self.pad_y == 0.0
    }

    pub fn scaled_dims(&self) -> (u32, u32) {
        ((self.src_width as f64 * self.scale).round() as u32, (self.src_height as f64 * self.scale).round() as u32)
    }

    pub fn to_network(&self, b: &BBox) -> BBox {
        BBox {
            x_min: b.x_min * self.scale + self.pad_x,
            y_min: b.y_min * self.scale + self.pad_y,
            x_max: b.x_max * self.scale + self.pad_x,
            y_max: b.y_max * self.scale + self.pad_y,
        }
    }

    pub fn to_source(&self, b: &BBox) -> BBox {
        BBox {
            x_min: (b.x_min - self.pad_x) / self.scale,
            y_min: (b.y_min - self.pad_y) / self.scale,
            x_max: (b.x_max - self.pad_x) / self.scale,
            y_max: (b.y_max - self.pad_y) / self.scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_identical_and_disjoint() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        let b = BBox::new(20.0, 20.0, 30.0, 30.0).unwrap();
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_hand_case() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = BBox::new(5.0, 5.0, 15.0, 15.0).unwrap();
        assert_eq!(iou(&a, &b), 25.0 / 175.0);
    }

    #[test]
    fn zero_area_iou_is_zero() {
        let a = BBox { x_min: 1.0, y_min: 1.0, x_max: 1.0, y_max: 5.0 };
        let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BBox::new(5.0, 0.0, 5.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn diou_concentric_equals_iou() {
        let a = BBox::from_center_size(10.0, 10.0, 4.0, 4.0);
        let b = BBox::from_center_size(10.0, 10.0, 8.0, 8.0);
        assert_eq!(diou(&a, &b), iou(&a, &b));
        let c = BBox::from_center_size(12.0, 10.0, 8.0, 8.0);
        assert!(diou(&a, &c) < iou(&a, &c));
    }

    #[test]
    fn letterbox_round_trip() {
        let lb = Letterbox::new(640, 480, 416);
        let b = BBox::new(100.0, 50.0, 140.0, 90.0).unwrap();
        let back = lb.to_source(&lb.to_network(&b));
        assert!((back.x_min - b.x_min).abs() < 1e-9);
        assert!((back.y_max - b.y_max).abs() < 1e-9);
        assert_eq!(lb.pad_x, 0.0);
        assert!(lb.pad_y > 0.0);
        assert!(Letterbox::new(128, 128, 128).is_identity());
    }
}
