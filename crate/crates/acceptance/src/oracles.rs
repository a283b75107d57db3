//! Reference computations written independently of the library code they
//! check: lattice counting, brute-force suppression, finite differences.

use tinydet_core::postprocess::Detection;

/// Intersection and union cell counts of two integer rectangles, by visiting
/// every lattice cell of their bounding hull.
pub fn raster_iou(a: (i32, i32, i32, i32), b: (i32, i32, i32, i32)) -> (i64, i64) {
    let (mut inter, mut union) = (0i64, 0i64);
    for y in a.1.min(b.1)..a.3.max(b.3) {
        for x in a.0.min(b.0)..a.2.max(b.2) {
            let in_a = x >= a.0 && x < a.2 && y >= a.1 && y < a.3;
            let in_b = x >= b.0 && x < b.2 && y >= b.1 && y < b.3;
            inter += (in_a && in_b) as i64;
            union += (in_a || in_b) as i64;
        }
    }
    (inter, union)
}

/// Center-form DIoU from first principles.
pub fn diou(a: &Detection, b: &Detection) -> f64 {
    let (ax0, ay0, ax1, ay1) = (a.b_x - a.b_w / 2.0, a.b_y - a.b_h / 2.0, a.b_x + a.b_w / 2.0, a.b_y + a.b_h / 2.0);
    let (bx0, by0, bx1, by1) = (b.b_x - b.b_w / 2.0, b.b_y - b.b_h / 2.0, b.b_x + b.b_w / 2.0, b.b_y + b.b_h / 2.0);
    let inter = (ax1.min(bx1) - ax0.max(bx0)).max(0.0) * (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let overlap = inter / (a.b_w * a.b_h + b.b_w * b.b_h - inter);
    let cw = ax1.max(bx1) - ax0.min(bx0);
    let ch = ay1.max(by1) - ay0.min(by0);
    overlap - ((a.b_x - b.b_x).powi(2) + (a.b_y - b.b_y).powi(2)) / (cw * cw + ch * ch)
}

/// Greedy suppression by exhaustive search: keep the highest-scoring box
/// left (earliest provenance on ties), strike same-class boxes above `thr`.
pub fn greedy_nms(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let mut alive = dets.to_vec();
    let mut kept = Vec::new();
    while !alive.is_empty() {
        let mut best = 0;
        for i in 1..alive.len() {
            let (a, b) = (&alive[i], &alive[best]);
            if a.confidence > b.confidence || (a.confidence == b.confidence && a.provenance < b.provenance) {
                best = i;
            }
        }
        let k = alive.remove(best);
        alive.retain(|d| d.class_id != k.class_id || diou(&k, d) <= thr);
        kept.push(k);
    }
    kept
}

/// Central difference of `f` along coordinate `i`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut up = x.to_vec();
    let mut dn = x.to_vec();
    up[i] += h;
    dn[i] -= h;
    (f(&up) - f(&dn)) / (2.0 * h)
}

/// `|analytic - fd| / max(|fd|, floor)`; the floor keeps vanishing
/// derivatives from turning roundoff into a large ratio.
pub fn relative_error(analytic: f64, fd: f64, floor: f64) -> f64 {
    (analytic - fd).abs() / fd.abs().max(floor)
}
