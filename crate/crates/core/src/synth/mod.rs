//! Synthetic sperm-like microscopy scenes used as the oracle dataset.

pub mod degrade;
pub mod export;
pub mod quadrature;
pub mod scene;

pub use degrade::{render_degradations, DegradationConfig};
pub use export::{read_tracks, write_scene, TrackRecord, TracksFile};
pub use scene::{generate_scene, support_threshold, AnalyticVelocities, GroundTruthTrack, Kinematics, Scene, SceneConfig, SceneObject, SceneOutput};
