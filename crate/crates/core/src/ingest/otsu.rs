//! Otsu thresholding used as a sharpness indicator.

use image::{DynamicImage, GrayImage};

/// 256-bin grayscale histogram.
pub fn histogram(gray: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for p in gray.as_raw() {
        hist[*p as usize] += 1;
    }
    hist
}

/// Level `t` maximizing the between-class variance when splitting the
/// histogram into `[0, t]` and `(t, 255]`.
///
/// Ties go to the lowest level. A histogram with a single occupied level (or
/// none) has no valid split and maps to 0.
pub fn otsu_threshold_from_histogram(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    let weighted: u128 = hist.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();

    // n0 n1 (mu0 - mu1)^2 = (N S0 - n0 S)^2 / (N^2 n0 n1); N^2 is common to
    // every split so the comparison uses (N S0 - n0 S)^2 / (n0 n1) exactly.
    let mut best: Option<(u8, u128, u128)> = None;
    let mut n0: u64 = 0;
    let mut s0: u128 = 0;
    for t in 0..255usize {
        n0 += hist[t];
        s0 += t as u128 * hist[t] as u128;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (total as u128 * s0).abs_diff(n0 as u128 * weighted);
        let num = diff * diff;
        let den = n0 as u128 * n1 as u128;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => wide_gt(num, bd, bn, den),
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    best.map(|(t, _, _)| t).unwrap_or(0)
}

pub fn otsu_threshold(gray: &GrayImage) -> u8 {
    otsu_threshold_from_histogram(&histogram(gray))
}

/// Otsu level of any raster after grayscale conversion.
pub fn otsu_of(image: &DynamicImage) -> u8 {
    match image {
        DynamicImage::ImageLuma8(g) => otsu_threshold(g),
        other => otsu_threshold(&other.to_luma8()),
    }
}

/// `a * b > c * d` on 256-bit products.
fn wide_gt(a: u128, b: u128, c: u128, d: u128) -> bool {
    mul_wide(a, b) > mul_wide(c, d)
}

fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    let mask = u64::MAX as u128;
    let (a_hi, a_lo) = (a >> 64, a & mask);
    let (b_hi, b_lo) = (b >> 64, b & mask);
    let lo_lo = a_lo * b_lo;
    let hi_lo = a_hi * b_lo;
    let lo_hi = a_lo * b_hi;
    let hi_hi = a_hi * b_hi;
    let mid = (lo_lo >> 64) + (hi_lo & mask) + (lo_hi & mask);
    let lo = (lo_lo & mask) | ((mid & mask) << 64);
    let hi = hi_hi + (hi_lo >> 64) + (lo_hi >> 64) + (mid >> 64);
    (hi, lo)
}
