#![allow(dead_code)]

use image::codecs::jpeg::JpegEncoder;
use image::GrayImage;

fn chunk(id: &[u8; 4], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 9);
    out.extend_from_slice(id);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    if payload.len() % 2 == 1 {
        out.push(0);
    }
    out
}

fn list(kind: &[u8; 4], body: &[u8]) -> Vec<u8> {
    let mut payload = kind.to_vec();
    payload.extend_from_slice(body);
    chunk(b"LIST", &payload)
}

fn le32(v: &mut Vec<u8>, x: u32) {
    v.extend_from_slice(&x.to_le_bytes());
}

/// Encodes frames as a minimal MJPEG AVI.
pub fn write_mjpeg_avi(frames: &[GrayImage], fps: u32) -> Vec<u8> {
    let (w, h) = frames[0].dimensions();
    let mut avih = Vec::new();
    for x in [1_000_000 / fps, 0, 0, 0x10, frames.len() as u32, 0, 1, 0, w, h, 0, 0, 0, 0] {
        le32(&mut avih, x);
    }
    let mut strh = b"vidsMJPG".to_vec();
    for x in [0u32, 0, 0, 1, fps, 0, frames.len() as u32, 0, u32::MAX, 0, 0, 0] {
        le32(&mut strh, x);
    }
    let mut strf = Vec::new();
    for x in [40u32, w, h] {
        le32(&mut strf, x);
    }
    strf.extend_from_slice(&1u16.to_le_bytes());
    strf.extend_from_slice(&24u16.to_le_bytes());
    strf.extend_from_slice(b"MJPG");
    for x in [w * h * 3, 0, 0, 0, 0] {
        le32(&mut strf, x);
    }
    let strl = list(b"strl", &[chunk(b"strh", &strh), chunk(b"strf", &strf)].concat());
    let hdrl = list(b"hdrl", &[chunk(b"avih", &avih), strl].concat());
    let mut movi = Vec::new();
    for f in frames {
        let mut jpg = Vec::new();
        JpegEncoder::new_with_quality(&mut jpg, 95).encode_image(f).unwrap();
        movi.extend(chunk(b"00dc", &jpg));
    }
    let movi = list(b"movi", &movi);
    let mut riff = b"AVI ".to_vec();
    riff.extend(hdrl);
    riff.extend(movi);
    chunk(b"RIFF", &riff)
}

/// Exhaustive Otsu: maximises between-class variance over every level, in
/// floating point, first maximum wins.
pub fn brute_force_otsu(img: &GrayImage) -> u8 {
    let mut hist = [0f64; 256];
    for p in img.pixels() {
        hist[p.0[0] as usize] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    let distinct = hist.iter().filter(|&&c| c > 0.0).count();
    if distinct <= 1 {
        return 0;
    }
    let mut best = (f64::NEG_INFINITY, 0u8);
    for t in 0..256usize {
        let (mut w0, mut s0, mut w1, mut s1) = (0.0, 0.0, 0.0, 0.0);
        for (level, &c) in hist.iter().enumerate() {
            if level <= t {
                w0 += c;
                s0 += c * level as f64;
            } else {
                w1 += c;
                s1 += c * level as f64;
            }
        }
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (s0 / w0, s1 / w1);
        let var = w0 / total * w1 / total * (m0 - m1).powi(2);
        if var > best.0 * (1.0 + 1e-12) {
            best = (var, t as u8);
        }
    }
    best.1
}
