//! Forward and backward kernels: convolution (im2col + GEMM), Mish,
//! stride-1 max pooling, nearest upsampling and channel concatenation.

use crate::tensor::Tensor;

/// Row-major `C = alpha * A(m x k) * B(k x n) + beta * C`, with explicit
/// strides so transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], rsa: usize, csa: usize, b: &[f32], rsb: usize, csb: usize, beta: f32, c: &mut [f32], ldc: usize) {
    debug_assert!(m == 0 || c.len() >= (m - 1) * ldc + n);
    // SAFETY: callers pass slices covering every index reached by the given
    // shapes and strides; the output does not alias the inputs.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
}

/// Column-buffer budget in floats; im2col works on blocks of output rows
/// that fit, which keeps the buffer cache resident.
const COLS_BUDGET: usize = 1 << 17;

impl ConvGeom {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, h: usize, w: usize) -> Self {
        let pad = k / 2;
        Self { cin, cout, k, stride, pad, h, w, ho: (h + 2 * pad - k) / stride + 1, wo: (w + 2 * pad - k) / stride + 1 }
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    fn row_blocks(&self) -> impl Iterator<Item = std::ops::Range<usize>> {
        let per_row = self.col_rows() * self.wo;
        let step = (COLS_BUDGET / per_row.max(1)).clamp(1, self.ho);
        let ho = self.ho;
        (0..ho).step_by(step).map(move |a| a..(a + step).min(ho))
    }
}

/// Output columns `[lo, hi)` whose input column `ox * s + kx - p` is in range.
#[inline]
fn valid_span(kx: usize, g: &ConvGeom) -> (usize, usize) {
    let (s, p) = (g.stride, g.pad);
    let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
    let hi = if g.w + p > kx { (g.w + p - kx).div_ceil(s).min(g.wo) } else { 0 };
    (lo.min(hi), hi)
}

/// Columns for output rows `rows`, laid out `[cin * k * k][rows.len() * wo]`.
fn im2col(x: &[f32], g: &ConvGeom, rows: std::ops::Range<usize>, cols: &mut [f32]) {
    let (k, s, p) = (g.k, g.stride, g.pad);
    let hw = rows.len() * g.wo;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (lo, hi) = valid_span(kx, g);
                for (r, oy) in rows.clone().enumerate() {
                    let iy = (oy * s + ky) as isize - p as isize;
                    let line = &mut dst[r * g.wo..(r + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    if s == 1 {
                        line[lo..hi].copy_from_slice(&src[lo + kx - p..hi + kx - p]);
                    } else {
                        for (ox, v) in line[lo..hi].iter_mut().enumerate() {
                            *v = src[(ox + lo) * s + kx - p];
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], g: &ConvGeom, rows: std::ops::Range<usize>, dx: &mut [f32]) {
    let (k, s, p) = (g.k, g.stride, g.pad);
    let hw = rows.len() * g.wo;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let (lo, hi) = valid_span(kx, g);
                for (r, oy) in rows.clone().enumerate() {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let from = &src[r * g.wo + lo..r * g.wo + hi];
                    if s == 1 {
                        for (d, v) in line[lo + kx - p..hi + kx - p].iter_mut().zip(from) {
                            *d += *v;
                        }
                    } else {
                        for (ox, v) in from.iter().enumerate() {
                            line[(ox + lo) * s + kx - p] += *v;
                        }
                    }
                }
            }
        }
    }
}

/// `weight` is `[cout][cin][k][k]`, `bias` `[cout]`.
pub fn conv_forward(x: &Tensor, weight: &[f32], bias: &[f32], g: &ConvGeom) -> Tensor {
    debug_assert_eq!((x.c, x.h, x.w), (g.cin, g.h, g.w));
    let mut y = Tensor::zeros(x.n, g.cout, g.ho, g.wo);
    let (rows, hw) = (g.col_rows(), g.col_cols());
    let mut cols = Vec::new();
    for i in 0..x.n {
        let out = y.sample_mut(i);
        for (co, b) in bias.iter().enumerate() {
            out[co * hw..(co + 1) * hw].fill(*b);
        }
        if g.is_pointwise() {
            gemm(g.cout, rows, hw, weight, rows, 1, x.sample(i), hw, 1, 1.0, out, hw);
            continue;
        }
        for block in g.row_blocks() {
            let n = block.len() * g.wo;
            cols.resize(rows * n, 0.0);
            let off = block.start * g.wo;
            im2col(x.sample(i), g, block, &mut cols);
            gemm(g.cout, rows, n, weight, rows, 1, &cols, n, 1, 1.0, &mut out[off..], hw);
        }
    }
    y
}

/// Accumulates weight and bias gradients (when `dw` is given) and returns
/// the input gradient when `need_dx`.
pub fn conv_backward(x: &Tensor, dy: &Tensor, weight: &[f32], g: &ConvGeom, dw: Option<(&mut [f32], &mut [f32])>, need_dx: bool) -> Option<Tensor> {
    let (rows, hw) = (g.col_rows(), g.col_cols());
    let mut cols = Vec::new();
    let mut dcols = Vec::new();
    let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
    let mut dw = dw;
    for i in 0..x.n {
        let gy = dy.sample(i);
        if let Some((_, db)) = dw.as_mut() {
            for (co, d) in db.iter_mut().enumerate() {
                *d += gy[co * hw..(co + 1) * hw].iter().sum::<f32>();
            }
        }
        if g.is_pointwise() {
            if let Some((dw, _)) = dw.as_mut() {
                // dW += dY * X^T
                gemm(g.cout, hw, rows, gy, hw, 1, x.sample(i), 1, hw, 1.0, dw, rows);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(rows, g.cout, hw, weight, 1, rows, gy, hw, 1, 0.0, dx.sample_mut(i), hw);
            }
            continue;
        }
        for block in g.row_blocks() {
            let n = block.len() * g.wo;
            let gblk = &gy[block.start * g.wo..];
            if let Some((dw, _)) = dw.as_mut() {
                cols.resize(rows * n, 0.0);
                im2col(x.sample(i), g, block.clone(), &mut cols);
                // dW += dY_block * cols^T
                gemm(g.cout, n, rows, gblk, hw, 1, &cols, 1, n, 1.0, dw, rows);
            }
            if let Some(dx) = dx.as_mut() {
                // dcols = W^T * dY_block
                dcols.resize(rows * n, 0.0);
                gemm(rows, g.cout, n, weight, 1, rows, gblk, hw, 1, 0.0, &mut dcols, n);
                col2im(&dcols, g, block, dx.sample_mut(i));
            }
        }
    }
    dx
}

/// `e^x` for f32 by range reduction and a degree-6 polynomial (relative
/// error about 2e-7). Branch-free so the element loops vectorise.
#[inline(always)]
pub fn fast_exp(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_145_75;
    const LN2_LO: f32 = 1.428_606_8e-6;
    const ROUND: f32 = 12_582_912.0;
    let x = x.clamp(-87.0, 88.0);
    let k = (x * LOG2E + ROUND) - ROUND;
    let r = x - k * LN2_HI - k * LN2_LO;
    let p = 1.0 + r * (1.0 + r * (0.5 + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0))))));
    p * f32::from_bits(((k as i32 + 127) << 23) as u32)
}

/// `tanh(softplus(x))` as `n(n + 2) / (n(n + 2) + 2)` with `n = e^x`, and the
/// logistic `n / (1 + n)`.
#[inline(always)]
fn mish_parts(x: f32) -> (f32, f32) {
    let n = fast_exp(x.min(20.0));
    let a = n * (n + 2.0);
    (a / (a + 2.0), n / (1.0 + n))
}

pub fn mish(x: f32) -> f32 {
    x * mish_parts(x).0
}

pub fn mish_grad(x: f32) -> f32 {
    let (t, s) = mish_parts(x);
    t + x * (1.0 - t * t) * s
}

pub fn mish_forward(x: &Tensor) -> Tensor {
    Tensor { data: x.data.iter().map(|&v| mish(v)).collect(), ..*x }
}

pub fn mish_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    Tensor { data: x.data.iter().zip(&dy.data).map(|(&v, &g)| g * mish_grad(v)).collect(), ..*x }
}

/// Stride-1 max pooling with `k / 2` padding (padding never wins). Returns
/// the output and, per output element, the flat in-plane index it came from.
/// Separable: row maxima first, then column maxima over them.
pub fn maxpool_forward(x: &Tensor, k: usize) -> (Tensor, Vec<u32>) {
    let r = k / 2;
    let (h, w) = (x.h, x.w);
    let mut y = Tensor::zeros(x.n, x.c, h, w);
    let mut arg = vec![0u32; x.data.len()];
    let mut row_max = vec![0f32; h * w];
    let mut row_arg = vec![0u32; h * w];
    for plane in 0..x.n * x.c {
        let src = &x.data[plane * h * w..(plane + 1) * h * w];
        for yy in 0..h {
            for xx in 0..w {
                let lo = xx.saturating_sub(r);
                let hi = (xx + r).min(w - 1);
                let mut best = lo;
                for j in lo + 1..=hi {
                    if src[yy * w + j] > src[yy * w + best] {
                        best = j;
                    }
                }
                row_max[yy * w + xx] = src[yy * w + best];
                row_arg[yy * w + xx] = (yy * w + best) as u32;
            }
        }
        let dst = &mut y.data[plane * h * w..(plane + 1) * h * w];
        let a = &mut arg[plane * h * w..(plane + 1) * h * w];
        for yy in 0..h {
            let lo = yy.saturating_sub(r);
            let hi = (yy + r).min(h - 1);
            for xx in 0..w {
                let mut best = lo;
                for i in lo + 1..=hi {
                    if row_max[i * w + xx] > row_max[best * w + xx] {
                        best = i;
                    }
                }
                dst[yy * w + xx] = row_max[best * w + xx];
                a[yy * w + xx] = row_arg[best * w + xx];
            }
        }
    }
    (y, arg)
}

pub fn maxpool_backward(dy: &Tensor, arg: &[u32]) -> Tensor {
    let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
    let plane = dy.h * dy.w;
    for p in 0..dy.n * dy.c {
        let g = &dy.data[p * plane..(p + 1) * plane];
        let a = &arg[p * plane..(p + 1) * plane];
        let d = &mut dx.data[p * plane..(p + 1) * plane];
        for (gv, &ai) in g.iter().zip(a) {
            d[ai as usize] += *gv;
        }
    }
    dx
}

/// Nearest-neighbour x2 upsampling cropped to `h x w` (at most twice the input).
pub fn upsample2_forward(x: &Tensor, h: usize, w: usize) -> Tensor {
    debug_assert!(h <= 2 * x.h && w <= 2 * x.w);
    let mut y = Tensor::zeros(x.n, x.c, h, w);
    for p in 0..x.n * x.c {
        let src = &x.data[p * x.h * x.w..(p + 1) * x.h * x.w];
        let dst = &mut y.data[p * h * w..(p + 1) * h * w];
        for yy in 0..h {
            for xx in 0..w {
                dst[yy * w + xx] = src[(yy / 2) * x.w + xx / 2];
            }
        }
    }
    y
}

/// Adjoint of [`upsample2_forward`] back to an `h x w` input.
pub fn upsample2_backward(dy: &Tensor, h: usize, w: usize) -> Tensor {
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for p in 0..dy.n * dy.c {
        let src = &dy.data[p * dy.h * dy.w..(p + 1) * dy.h * dy.w];
        let dst = &mut dx.data[p * h * w..(p + 1) * h * w];
        for yy in 0..dy.h {
            for xx in 0..dy.w {
                dst[(yy / 2) * w + xx / 2] += src[yy * dy.w + xx];
            }
        }
    }
    dx
}

pub fn concat_forward(parts: &[&Tensor]) -> Tensor {
    let (n, h, w) = (parts[0].n, parts[0].h, parts[0].w);
    let c: usize = parts.iter().map(|p| p.c).sum();
    let mut y = Tensor::zeros(n, c, h, w);
    for i in 0..n {
        let mut off = 0;
        let dst = y.sample_mut(i);
        for p in parts {
            let s = p.sample(i);
            dst[off..off + s.len()].copy_from_slice(s);
            off += s.len();
        }
    }
    y
}

/// Splits a concatenated gradient back into per-part gradients.
pub fn concat_backward(dy: &Tensor, channels: &[usize]) -> Vec<Tensor> {
    let plane = dy.h * dy.w;
    let mut out: Vec<Tensor> = channels.iter().map(|&c| Tensor::zeros(dy.n, c, dy.h, dy.w)).collect();
    for i in 0..dy.n {
        let src = dy.sample(i);
        let mut off = 0;
        for t in out.iter_mut() {
            let len = t.c * plane;
            t.sample_mut(i).copy_from_slice(&src[off..off + len]);
            off += len;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(x: &Tensor, w: &[f32], b: &[f32], g: &ConvGeom) -> Tensor {
        let mut y = Tensor::zeros(x.n, g.cout, g.ho, g.wo);
        for n in 0..x.n {
            for co in 0..g.cout {
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        let mut acc = b[co] as f64;
                        for ci in 0..g.cin {
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    let xv = x.data[((n * g.cin + ci) * g.h + iy as usize) * g.w + ix as usize];
                                    acc += xv as f64 * w[((co * g.cin + ci) * g.k + ky) * g.k + kx] as f64;
                                }
                            }
                        }
                        y.data[((n * g.cout + co) * g.ho + oy) * g.wo + ox] = acc as f32;
                    }
                }
            }
        }
        y
    }

    fn lcg(seed: &mut u64) -> f32 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut s = 7;
        // The last two span several im2col row blocks.
        for &(cin, cout, k, stride, h, w) in
            &[(3, 4, 3, 1, 7, 5), (2, 3, 3, 2, 8, 8), (4, 2, 1, 1, 5, 6), (2, 2, 3, 2, 7, 9), (32, 2, 3, 1, 64, 60), (32, 3, 3, 2, 64, 64)]
        {
            let g = ConvGeom::new(cin, cout, k, stride, h, w);
            let x = Tensor::from_vec(2, cin, h, w, (0..2 * cin * h * w).map(|_| lcg(&mut s)).collect());
            let wt: Vec<f32> = (0..cout * cin * k * k).map(|_| lcg(&mut s)).collect();
            let b: Vec<f32> = (0..cout).map(|_| lcg(&mut s)).collect();
            let got = conv_forward(&x, &wt, &b, &g);
            let want = direct_conv(&x, &wt, &b, &g);
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-6 * (cin * k * k) as f32, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), dy> = <x, conv^T(dy)> and the weight gradient likewise.
        let mut s = 3;
        for g in [ConvGeom::new(3, 4, 3, 2, 7, 6), ConvGeom::new(32, 4, 3, 1, 40, 64)] {
            assert!(g.cin < 32 || g.row_blocks().count() > 1);
            let x = Tensor::from_vec(2, g.cin, g.h, g.w, (0..2 * g.cin * g.h * g.w).map(|_| lcg(&mut s)).collect());
            let wt: Vec<f32> = (0..4 * g.cin * 9).map(|_| lcg(&mut s)).collect();
            let zero = vec![0.0; 4];
            let y = conv_forward(&x, &wt, &zero, &g);
            let dy = Tensor::from_vec(y.n, y.c, y.h, y.w, (0..y.data.len()).map(|_| lcg(&mut s)).collect());
            let mut dw = vec![0.0; wt.len()];
            let mut db = vec![0.0; 4];
            let dx = conv_backward(&x, &dy, &wt, &g, Some((&mut dw, &mut db)), true).unwrap();
            let tol = 1e-4 * (g.cin as f64);
            let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| *a as f64 * *b as f64).sum();
            let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| *a as f64 * *b as f64).sum();
            assert!((lhs - rhs).abs() < tol * lhs.abs().max(1.0));
            let rhs_w: f64 = wt.iter().zip(&dw).map(|(a, b)| *a as f64 * *b as f64).sum();
            assert!((lhs - rhs_w).abs() < tol * lhs.abs().max(1.0));
            let sum_dy: f32 = dy.sample(0)[..y.h * y.w].iter().chain(&dy.sample(1)[..y.h * y.w]).sum();
            assert!((db[0] - sum_dy).abs() < 1e-3);
        }
    }

    #[test]
    fn maxpool_matches_window_scan() {
        let mut s = 11;
        let x = Tensor::from_vec(1, 2, 6, 7, (0..84).map(|_| lcg(&mut s)).collect());
        for k in [3, 5, 9] {
            let (y, arg) = maxpool_forward(&x, k);
            let r = (k / 2) as isize;
            for p in 0..2 {
                for yy in 0..6isize {
                    for xx in 0..7isize {
                        let mut best = f32::NEG_INFINITY;
                        for dy in -r..=r {
                            for dx in -r..=r {
                                let (iy, ix) = (yy + dy, xx + dx);
                                if (0..6).contains(&iy) && (0..7).contains(&ix) {
                                    best = best.max(x.data[p * 42 + (iy * 7 + ix) as usize]);
                                }
                            }
                        }
                        let o = p * 42 + (yy * 7 + xx) as usize;
                        assert_eq!(y.data[o], best);
                        assert_eq!(x.data[p * 42 + arg[o] as usize], best);
                    }
                }
            }
        }
    }

    #[test]
    fn mish_grad_matches_difference() {
        for x in [-6.0f32, -1.3, -0.2, 0.0, 0.4, 2.5, 9.0] {
            let h = 1e-3f64;
            let f = |v: f64| v * (v.exp().ln_1p()).tanh();
            let fd = (f(x as f64 + h) - f(x as f64 - h)) / (2.0 * h);
            assert!((mish_grad(x) as f64 - fd).abs() < 1e-4, "{x}");
        }
    }

    #[test]
    fn fast_exp_accuracy() {
        let mut x = -80.0f32;
        while x < 80.0 {
            let rel = ((fast_exp(x) as f64 - (x as f64).exp()) / (x as f64).exp()).abs();
            assert!(rel < 1e-6, "{x}: {rel}");
            x += 0.0137;
        }
        assert!(fast_exp(-1000.0) >= 0.0 && fast_exp(1000.0).is_finite());
    }

    #[test]
    fn upsample_and_concat_round_trip() {
        let x = Tensor::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let y = upsample2_forward(&x, 4, 4);
        assert_eq!(&y.data[..4], &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(upsample2_backward(&y, 2, 2).data, vec![4.0, 8.0, 12.0, 16.0]);
        assert_eq!(upsample2_forward(&x, 3, 3).data, vec![1.0, 1.0, 2.0, 1.0, 1.0, 2.0, 3.0, 3.0, 4.0]);
        let c = concat_forward(&[&x, &x]);
        let parts = concat_backward(&c, &[1, 1]);
        assert_eq!(parts[1], x);
    }
}
