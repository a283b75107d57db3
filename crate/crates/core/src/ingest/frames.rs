//! Frame extraction from videos, single images and image directories.

use std::path::{Path, PathBuf};
use std::process::Command;

use image::{DynamicImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::avi;
use super::otsu::otsu_of;
use crate::error::{CoreError, Result};

/// Rate assigned to image sequences when no override is given.
pub const DEFAULT_SEQUENCE_FPS: f64 = 25.0;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

#[derive(Debug, Clone)]
pub struct Frame {
    pub index: usize,
    pub image: DynamicImage,
    pub source_id: String,
    pub timestamp_s: f64,
}

impl Frame {
    pub fn new(source_id: impl Into<String>, index: usize, fps: f64, image: DynamicImage) -> Self {
        Self { index, image, source_id: source_id.into(), timestamp_s: index as f64 / fps }
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }
}

/// Identifier of the source a path contributes frames to: its file stem.
pub fn source_id_of(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("source").to_string()
}

fn decode_error(path: &Path, reason: impl Into<String>) -> CoreError {
    CoreError::Decode { path: path.to_path_buf(), reason: reason.into() }
}

fn has_ext(path: &Path, exts: &[&str]) -> bool {
    path.extension().and_then(|e| e.to_str()).map(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e))).unwrap_or(false)
}

/// Decodes `media` into frames.
///
/// Single images yield one frame at index 0. Directories are read as image
/// sequences in lexicographic order. AVI (MJPEG or uncompressed) is demuxed
/// natively; other containers go through `ffmpeg`/`ffprobe` when installed.
/// Decoding is all-or-nothing: any failure returns an error and no frames.
pub fn extract_frames(media: &Path, fps_override: Option<f64>) -> Result<Vec<Frame>> {
    if let Some(fps) = fps_override {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(CoreError::Parameter(format!("fps override must be positive, got {fps}")));
        }
    }
    if !media.exists() {
        return Err(decode_error(media, "no such file or directory"));
    }
    let source = source_id_of(media);

    if media.is_dir() {
        let mut paths: Vec<PathBuf> =
            std::fs::read_dir(media)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file() && has_ext(p, IMAGE_EXTENSIONS)).collect();
        paths.sort();
        if paths.is_empty() {
            return Err(CoreError::EmptyInput(media.to_path_buf()));
        }
        let fps = fps_override.unwrap_or(DEFAULT_SEQUENCE_FPS);
        return paths
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let img = image::open(p).map_err(|e| decode_error(p, e.to_string()))?;
                Ok(Frame::new(source.clone(), i, fps, img))
            })
            .collect();
    }

    if has_ext(media, IMAGE_EXTENSIONS) {
        let img = image::open(media).map_err(|e| decode_error(media, e.to_string()))?;
        return Ok(vec![Frame::new(source, 0, fps_override.unwrap_or(DEFAULT_SEQUENCE_FPS), img)]);
    }

    let (fps, images) = if has_ext(media, &["avi"]) {
        let bytes = std::fs::read(media)?;
        let video = avi::decode_avi(&bytes).map_err(|r| decode_error(media, r))?;
        (video.fps, video.frames)
    } else {
        decode_with_ffmpeg(media)?
    };
    if images.is_empty() {
        return Err(CoreError::EmptyInput(media.to_path_buf()));
    }
    let fps = fps_override.unwrap_or(fps);
    Ok(images.into_iter().enumerate().map(|(i, img)| Frame::new(source.clone(), i, fps, img)).collect())
}

fn decode_with_ffmpeg(media: &Path) -> Result<(f64, Vec<DynamicImage>)> {
    let probe = Command::new("ffprobe")
        .args(["-v", "error", "-select_streams", "v:0", "-show_entries", "stream=width,height,r_frame_rate", "-of", "json"])
        .arg(media)
        .output()
        .map_err(|e| decode_error(media, format!("ffprobe unavailable ({e}); only AVI and still images decode natively")))?;
    if !probe.status.success() {
        return Err(decode_error(media, String::from_utf8_lossy(&probe.stderr).trim().to_string()));
    }
    let info: serde_json::Value = serde_json::from_slice(&probe.stdout)?;
    let stream = info["streams"].get(0).ok_or_else(|| decode_error(media, "no video stream"))?;
    let width = stream["width"].as_u64().ok_or_else(|| decode_error(media, "missing width"))? as u32;
    let height = stream["height"].as_u64().ok_or_else(|| decode_error(media, "missing height"))? as u32;
    let fps = stream["r_frame_rate"]
        .as_str()
        .and_then(|r| {
            let (n, d) = r.split_once('/')?;
            let (n, d): (f64, f64) = (n.parse().ok()?, d.parse().ok()?);
            (d > 0.0).then_some(n / d)
        })
        .unwrap_or(DEFAULT_SEQUENCE_FPS);

    let out = Command::new("ffmpeg")
        .args(["-v", "error", "-i"])
        .arg(media)
        .args(["-f", "rawvideo", "-pix_fmt", "rgb24", "-"])
        .output()
        .map_err(|e| decode_error(media, format!("ffmpeg unavailable: {e}")))?;
    if !out.status.success() {
        return Err(decode_error(media, String::from_utf8_lossy(&out.stderr).trim().to_string()));
    }
    let frame_len = (width * height * 3) as usize;
    if frame_len == 0 || out.stdout.len() % frame_len != 0 {
        return Err(decode_error(media, "decoded stream length is not a whole number of frames"));
    }
    let frames = out
        .stdout
        .chunks_exact(frame_len)
        .map(|c| DynamicImage::ImageRgb8(RgbImage::from_raw(width, height, c.to_vec()).expect("sized buffer")))
        .collect();
    Ok((fps, frames))
}

/// Per-frame record of the sharpness filter, also the frame manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameVerdict {
    pub source_id: String,
    pub index: usize,
    pub otsu_value: u8,
    pub kept: bool,
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub kept: Vec<Frame>,
    pub verdicts: Vec<FrameVerdict>,
    pub removed: usize,
}

impl FilterOutcome {
    /// Set when every frame was rejected; the caller decides what to do.
    pub fn all_removed(&self) -> bool {
        self.kept.is_empty() && self.removed > 0
    }
}

/// Keeps frames whose Otsu level is at least `otsu_cutoff`, preserving order.
pub fn filter_blurred(frames: Vec<Frame>, otsu_cutoff: u8) -> Result<FilterOutcome> {
    if frames.is_empty() {
        return Err(CoreError::Parameter("filter_blurred needs at least one frame".into()));
    }
    let mut kept = Vec::with_capacity(frames.len());
    let mut verdicts = Vec::with_capacity(frames.len());
    for frame in frames {
        let otsu_value = otsu_of(&frame.image);
        let keep = otsu_value >= otsu_cutoff;
        verdicts.push(FrameVerdict { source_id: frame.source_id.clone(), index: frame.index, otsu_value, kept: keep });
        if keep {
            kept.push(frame);
        }
    }
    let removed = verdicts.len() - kept.len();
    let outcome = FilterOutcome { kept, verdicts, removed };
    if outcome.all_removed() {
        log::warn!("blur filter at cutoff {otsu_cutoff} removed all {removed} frames");
    }
    Ok(outcome)
}
