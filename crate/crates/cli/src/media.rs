//! Frame sources for detection and server-side overlays.

use std::path::{Path, PathBuf};

use image::{DynamicImage, Rgb, RgbImage};
use tinydet_core::ingest::frames::DEFAULT_SEQUENCE_FPS;
use tinydet_core::ingest::{extract_frames, Frame};
use tinydet_core::postprocess::DetectionRecord;

use crate::error::CliError;

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

fn is_image(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).map(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e))).unwrap_or(false)
}

/// Trailing decimal digits of a file stem (`frame_00012` → 12).
pub fn trailing_index(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect::<Vec<_>>().into_iter().rev().collect();
    digits.parse().ok()
}

fn frame_from_image(path: &Path, source: &str, index: usize) -> Result<Frame, CliError> {
    let img = image::open(path).map_err(|e| CliError::Path { path: path.into(), reason: e.to_string() })?;
    Ok(Frame::new(source, index, DEFAULT_SEQUENCE_FPS, img))
}

/// Frames of `path`, identified the way annotations are: still images belong
/// to the source named after their directory and take the index in their
/// file name (a directory of images is read in name order), videos are
/// their own source indexed by decode order.
pub fn media_frames(path: &Path) -> Result<Vec<Frame>, CliError> {
    if !path.exists() {
        return Err(CliError::missing(path));
    }
    let dir_name = |p: &Path| p.file_name().and_then(|s| s.to_str()).unwrap_or("source").to_string();
    if path.is_dir() {
        let mut images: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| CliError::Path { path: path.into(), reason: e.to_string() })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        images.sort();
        if images.is_empty() {
            return Err(CliError::Path { path: path.into(), reason: "directory holds no images".into() });
        }
        let source = dir_name(path);
        return images.iter().enumerate().map(|(i, p)| frame_from_image(p, &source, trailing_index(p).unwrap_or(i))).collect();
    }
    if is_image(path) {
        let source = path.parent().map(dir_name).unwrap_or_else(|| "source".into());
        return Ok(vec![frame_from_image(path, &source, trailing_index(path).unwrap_or(0))?]);
    }
    extract_frames(path, None).map_err(|e| CliError::Input(e.to_string()))
}

/// Decodes uploaded bytes: a still image directly, anything else through a
/// temporary file named after `filename` so the container is recognised.
pub fn frames_from_bytes(bytes: &[u8], filename: &str) -> Result<Vec<Frame>, CliError> {
    let source = Path::new(filename).file_stem().and_then(|s| s.to_str()).filter(|s| !s.is_empty()).unwrap_or("upload").to_string();
    if let Ok(img) = image::load_from_memory(bytes) {
        return Ok(vec![Frame::new(source, 0, DEFAULT_SEQUENCE_FPS, img)]);
    }
    let ext = Path::new(filename).extension().and_then(|e| e.to_str()).unwrap_or("avi");
    let dir = tempfile::tempdir().map_err(|e| CliError::Input(e.to_string()))?;
    let tmp = dir.path().join(format!("{source}.{ext}"));
    std::fs::write(&tmp, bytes).map_err(|e| CliError::Input(e.to_string()))?;
    let frames = extract_frames(&tmp, None).map_err(|e| CliError::Input(format!("undecodable media: {e}")))?;
    Ok(frames)
}

pub fn class_colour(class: usize) -> Rgb<u8> {
    match class {
        0 => Rgb([40, 220, 60]),
        1 => Rgb([240, 160, 20]),
        _ => Rgb([220, 40, 220]),
    }
}

fn draw_rect(img: &mut RgbImage, r: &DetectionRecord, colour: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    if w == 0 || h == 0 {
        return;
    }
    let x0 = (r.x_min.floor() as i64).clamp(0, w - 1);
    let x1 = (r.x_max.ceil() as i64 - 1).clamp(0, w - 1);
    let y0 = (r.y_min.floor() as i64).clamp(0, h - 1);
    let y1 = (r.y_max.ceil() as i64 - 1).clamp(0, h - 1);
    for x in x0..=x1 {
        img.put_pixel(x as u32, y0 as u32, colour);
        img.put_pixel(x as u32, y1 as u32, colour);
    }
    for y in y0..=y1 {
        img.put_pixel(x0 as u32, y as u32, colour);
        img.put_pixel(x1 as u32, y as u32, colour);
    }
}

/// The frame with one-pixel boxes burned in, coloured by class.
pub fn render_overlay(image: &DynamicImage, records: &[DetectionRecord]) -> RgbImage {
    let mut img = image.to_rgb8();
    for r in records {
        draw_rect(&mut img, r, class_colour(r.class));
    }
    img
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).expect("in-memory PNG encoding");
    buf.into_inner()
}
