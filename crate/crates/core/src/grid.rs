//! Raw head output laid out per cell and anchor.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Values per anchor slot: `t_x, t_y, t_w, t_h, C, P_0, P_1`.
pub const SLOT_TX: usize = 0;
pub const SLOT_TY: usize = 1;
pub const SLOT_TW: usize = 2;
pub const SLOT_TH: usize = 3;
pub const SLOT_CONF: usize = 4;
pub const SLOT_CLASS0: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridGeometry {
    /// Network input side in pixels.
    pub input_size: usize,
    /// Output cells per side (`input_size / stride`).
    pub side: usize,
    pub stride: usize,
    pub n_anchors: usize,
    pub n_classes: usize,
}

impl GridGeometry {
    pub fn new(input_size: usize, stride: usize, n_anchors: usize, n_classes: usize) -> Result<Self> {
        if stride == 0 || input_size == 0 || input_size % stride != 0 {
            return Err(CoreError::Parameter(format!("input size {input_size} is not a multiple of stride {stride}")));
        }
        Ok(Self { input_size, side: input_size / stride, stride, n_anchors, n_classes })
    }

    pub fn slot_len(&self) -> usize {
        5 + self.n_classes
    }

    /// Channels per cell, `n_anchors * (5 + n_classes)`.
    pub fn cell_channels(&self) -> usize {
        self.n_anchors * self.slot_len()
    }

    pub fn n_slots(&self) -> usize {
        self.side * self.side * self.n_anchors
    }

    pub fn len(&self) -> usize {
        self.n_slots() * self.slot_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat slot index of `(row, col, anchor)`.
    pub fn slot_index(&self, row: usize, col: usize, anchor: usize) -> usize {
        (row * self.side + col) * self.n_anchors + anchor
    }

    pub fn slot_coords(&self, slot: usize) -> (usize, usize, usize) {
        let anchor = slot % self.n_anchors;
        let cell = slot / self.n_anchors;
        (cell / self.side, cell % self.side, anchor)
    }
}

/// `side x side x (n_anchors * (5 + n_classes))` values, cell-major then anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPrediction {
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
}

impl GridPrediction {
    pub fn zeros(geometry: GridGeometry) -> Self {
        Self { geometry, values: vec![0.0; geometry.len()] }
    }

    pub fn from_values(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(CoreError::Shape(format!("expected {} values, got {}", geometry.len(), values.len())));
        }
        Ok(Self { geometry, values })
    }

    /// `(rows, cols, channels)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.geometry.side, self.geometry.side, self.geometry.cell_channels())
    }

    pub fn slot(&self, slot: usize) -> &[f64] {
        let n = self.geometry.slot_len();
        &self.values[slot * n..(slot + 1) * n]
    }

    pub fn slot_mut(&mut self, slot: usize) -> &mut [f64] {
        let n = self.geometry.slot_len();
        &mut self.values[slot * n..(slot + 1) * n]
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`] on `(0, 1)`.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_count_is_42() {
        let g = GridGeometry::new(416, 8, 6, 2).unwrap();
        assert_eq!(g.side, 52);
        assert_eq!(g.cell_channels(), 42);
        assert!(GridGeometry::new(417, 8, 6, 2).is_err());
    }

    #[test]
    fn slot_index_round_trip() {
        let g = GridGeometry::new(64, 8, 6, 2).unwrap();
        for s in 0..g.n_slots() {
            let (r, c, a) = g.slot_coords(s);
            assert_eq!(g.slot_index(r, c, a), s);
        }
    }

    #[test]
    fn sigmoid_logit() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(logit(0.3)) - 0.3).abs() < 1e-12);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
