//! Head decoding and duplicate suppression.

mod decode;
mod nms;
mod records;

pub use decode::{decode, Detection};
pub use nms::diou_nms;
pub use records::{read_detections, write_detections, DetectionRecord};

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.5;
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.45;
