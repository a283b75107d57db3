//! Data pipeline, geometry, post-processing, evaluation and tracking for the
//! tinydet detector. The network itself lives in `tinydet-detector`.

pub mod error;
pub mod geometry;
pub mod grid;
pub mod ingest;
pub mod metrics;
pub mod postprocess;
pub mod synth;
pub mod tracking;

pub use error::{CoreError, Result};
