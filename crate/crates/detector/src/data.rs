//! Training samples: letterboxed inputs with boxes in network pixels.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use tinydet_core::geometry::Letterbox;
use tinydet_core::ingest::{load_voc_annotations, Annotation, FrameRef};

use crate::error::{DetectorError, Result};
use crate::preprocess::preprocess;
use crate::targets::TargetBox;

#[derive(Debug, Clone)]
pub struct Sample {
    pub frame_ref: FrameRef,
    /// `3 x size x size` planar input.
    pub input: Vec<f32>,
    pub size: usize,
    pub letterbox: Letterbox,
    pub boxes: Vec<TargetBox>,
}

impl Sample {
    pub fn new(frame_ref: FrameRef, image: &DynamicImage, annotations: &[Annotation], size: usize) -> Self {
        let (input, letterbox) = preprocess(image, size);
        let s = size as f64;
        let boxes = annotations
            .iter()
            .map(|a| TargetBox { bbox: letterbox.to_network(&a.bbox).clamp_to(s, s), class_id: a.class_id })
            .filter(|b| !b.bbox.is_degenerate())
            .collect();
        Self { frame_ref, input, size, letterbox, boxes }
    }

    /// Mirror image about the vertical and/or horizontal canvas axis.
    pub fn flipped(&self, horizontal: bool, vertical: bool) -> Sample {
        let s = self.size;
        let mut input = vec![0.0; self.input.len()];
        for c in 0..3 {
            for y in 0..s {
                let sy = if vertical { s - 1 - y } else { y };
                for x in 0..s {
                    let sx = if horizontal { s - 1 - x } else { x };
                    input[(c * s + y) * s + x] = self.input[(c * s + sy) * s + sx];
                }
            }
        }
        let sf = s as f64;
        let boxes = self
            .boxes
            .iter()
            .map(|b| {
                let mut bb = b.bbox;
                if horizontal {
                    (bb.x_min, bb.x_max) = (sf - b.bbox.x_max, sf - b.bbox.x_min);
                }
                if vertical {
                    (bb.y_min, bb.y_max) = (sf - b.bbox.y_max, sf - b.bbox.y_min);
                }
                TargetBox { bbox: bb, class_id: b.class_id }
            })
            .collect();
        Sample { frame_ref: self.frame_ref.clone(), input, size: s, letterbox: self.letterbox, boxes }
    }
}

fn trailing_index(stem: &str) -> Option<usize> {
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect::<Vec<_>>().into_iter().rev().collect();
    digits.parse().ok()
}

fn image_beside(xml: &Path) -> Option<PathBuf> {
    ["png", "jpg", "jpeg", "bmp"].iter().map(|e| xml.with_extension(e)).find(|p| p.exists())
}

/// Every `*.xml` annotation under `dir` (recursively) that has an image of
/// the same stem next to it. The source id is the parent directory name and
/// the frame index the trailing digits of the stem. Sorted by frame reference.
pub fn annotated_frames(dir: &Path) -> Result<Vec<(FrameRef, PathBuf, PathBuf)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "xml") {
                let Some(img) = image_beside(&p) else {
                    continue;
                };
                let source = p.parent().and_then(|q| q.file_name()).map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let index = trailing_index(&stem).unwrap_or(0);
                out.push((FrameRef::new(source, index), img, p));
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_annotated_dir(dir: &Path, size: usize, class_map: &HashMap<String, usize>) -> Result<Vec<Sample>> {
    let frames = annotated_frames(dir)?;
    if frames.is_empty() {
        return Err(DetectorError::Data(format!("no annotated images under {}", dir.display())));
    }
    frames
        .into_iter()
        .map(|(fr, img, xml)| {
            let doc = load_voc_annotations(&xml, class_map, fr.clone())?;
            let image = image::open(&img)?;
            Ok(Sample::new(fr, &image, &doc.annotations, size))
        })
        .collect()
}
