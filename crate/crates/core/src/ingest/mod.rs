//! Media ingest: frames, sharpness filtering, annotations, anchor priors and splits.

pub mod anchors;
mod avi;
pub mod frames;
pub mod otsu;
pub mod split;
pub mod voc;

pub use anchors::{cluster_anchors, AnchorSet, DEFAULT_ANCHOR_COUNT};
pub use frames::{extract_frames, filter_blurred, FilterOutcome, Frame, FrameVerdict};
pub use otsu::{otsu_of, otsu_threshold};
pub use split::{split_dataset, DatasetSplit};
pub use voc::{default_class_map, load_voc_annotations, write_voc, Annotation, FrameRef, CLASS_NAMES};

/// Default blur cutoff in grayscale levels.
pub const DEFAULT_BLUR_CUTOFF: u8 = 10;
