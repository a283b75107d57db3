//! Anchor priors by k-means under the `1 - IoU` distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const DEFAULT_ANCHOR_COUNT: usize = 6;
pub const MAX_ITERATIONS: usize = 300;
pub const DEFAULT_RESTARTS: usize = 40;

/// Ordered `(width, height)` priors in network-input pixels, ascending by area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct AnchorSet {
    anchors: Vec<(f64, f64)>,
}

impl AnchorSet {
    pub fn new(mut anchors: Vec<(f64, f64)>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(CoreError::Parameter("anchor set is empty".into()));
        }
        if anchors.iter().any(|&(w, h)| !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite())) {
            return Err(CoreError::Parameter("anchor sizes must be positive and finite".into()));
        }
        anchors.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)).then(a.0.total_cmp(&b.0)));
        Ok(Self { anchors })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn get(&self, i: usize) -> (f64, f64) {
        self.anchors[i]
    }

    pub fn as_slice(&self) -> &[(f64, f64)] {
        &self.anchors
    }

    /// Multiplies every prior by `factor` (e.g. when the input resolution changes).
    pub fn scaled(&self, factor: f64) -> AnchorSet {
        AnchorSet { anchors: self.anchors.iter().map(|&(w, h)| (w * factor, h * factor)).collect() }
    }

    /// Index of the prior with the highest origin-centered IoU with `(w, h)`.
    /// Ties keep the earlier (smaller) prior.
    pub fn best_match(&self, w: f64, h: f64) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &a) in self.anchors.iter().enumerate() {
            let v = shape_iou((w, h), a);
            if v > best.1 {
                best = (i, v);
            }
        }
        best.0
    }
}

impl TryFrom<Vec<[f64; 2]>> for AnchorSet {
    type Error = CoreError;
    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        AnchorSet::new(v.into_iter().map(|[w, h]| (w, h)).collect())
    }
}

impl From<AnchorSet> for Vec<[f64; 2]> {
    fn from(a: AnchorSet) -> Self {
        a.anchors.into_iter().map(|(w, h)| [w, h]).collect()
    }
}

/// IoU of two boxes sharing a center, given as `(w, h)`.
pub fn shape_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    inter / (a.0 * a.1 + b.0 * b.1 - inter)
}

/// Sum over boxes of `1 - IoU` to the nearest centroid.
pub fn clustering_cost(boxes: &[(f64, f64)], centroids: &[(f64, f64)]) -> f64 {
    boxes.iter().map(|&b| 1.0 - centroids.iter().map(|&c| shape_iou(b, c)).fold(f64::MIN, f64::max)).sum()
}

fn nearest(b: (f64, f64), centroids: &[(f64, f64)]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &c) in centroids.iter().enumerate() {
        let v = shape_iou(b, c);
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn kmeans_pp_init(boxes: &[(f64, f64)], k: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let mut centroids = vec![boxes[rng.gen_range(0..boxes.len())]];
    while centroids.len() < k {
        let weights: Vec<f64> = boxes
            .iter()
            .map(|&b| {
                let d = 1.0 - centroids.iter().map(|&c| shape_iou(b, c)).fold(f64::MIN, f64::max);
                d * d
            })
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut r = rng.gen::<f64>() * total;
        let mut pick = boxes.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if r < *w {
                pick = i;
                break;
            }
            r -= w;
        }
        centroids.push(boxes[pick]);
    }
    centroids
}

/// Lloyd iterations from `centroids` until assignments stop changing or the
/// iteration cap is hit. Empty clusters are re-seeded at the worst-fit box.
pub fn lloyd(boxes: &[(f64, f64)], mut centroids: Vec<(f64, f64)>, max_iter: usize) -> Vec<(f64, f64)> {
    let k = centroids.len();
    let mut assign: Vec<usize> = vec![usize::MAX; boxes.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, &b) in boxes.iter().enumerate() {
            let a = nearest(b, &centroids);
            if a != assign[i] {
                assign[i] = a;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (i, &b) in boxes.iter().enumerate() {
            let s = &mut sums[assign[i]];
            s.0 += b.0;
            s.1 += b.1;
            s.2 += 1;
        }
        for (j, s) in sums.iter().enumerate() {
            if s.2 > 0 {
                centroids[j] = (s.0 / s.2 as f64, s.1 / s.2 as f64);
            } else {
                let worst = boxes
                    .iter()
                    .enumerate()
                    .max_by(|x, y| {
                        let dx = 1.0 - shape_iou(*x.1, centroids[assign[x.0]]);
                        let dy = 1.0 - shape_iou(*y.1, centroids[assign[y.0]]);
                        dx.total_cmp(&dy)
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                centroids[j] = boxes[worst];
                assign[worst] = j;
            }
        }
    }
    centroids
}

/// Fits `k` anchor priors. Input order does not matter; the best of
/// `restarts` k-means++ seeded runs is returned, sorted by area.
pub fn cluster_anchors(boxes: &[(f64, f64)], k: usize, seed: u64) -> Result<AnchorSet> {
    cluster_anchors_with_restarts(boxes, k, seed, DEFAULT_RESTARTS)
}

pub fn cluster_anchors_with_restarts(boxes: &[(f64, f64)], k: usize, seed: u64, restarts: usize) -> Result<AnchorSet> {
    if k == 0 {
        return Err(CoreError::Parameter("k must be at least 1".into()));
    }
    if boxes.iter().any(|&(w, h)| !(w > 0.0 && h > 0.0)) {
        return Err(CoreError::Parameter("box sizes must be positive".into()));
    }
    let mut sorted = boxes.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < k {
        return Err(CoreError::DuplicateCentroid { k, distinct: distinct.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<(f64, f64)>)> = None;
    for _ in 0..restarts.max(1) {
        let mut init = kmeans_pp_init(&sorted, k, &mut rng);
        // k-means++ can stall on heavy duplication; top up from distinct sizes.
        for d in &distinct {
            if init.len() >= k {
                break;
            }
            if !init.contains(d) {
                init.push(*d);
            }
        }
        let centroids = lloyd(&sorted, init, MAX_ITERATIONS);
        let cost = clustering_cost(&sorted, &centroids);
        if best.as_ref().map_or(true, |(c, _)| cost < *c) {
            best = Some((cost, centroids));
        }
    }
    AnchorSet::new(best.expect("at least one restart").1)
}
