//! Nearest-neighbour trajectory linking and motility statistics.

mod associate;
mod compare;
mod io;
mod motility;

pub use associate::{associate, associate_by_source, Sample, TrackerConfig, Trajectory, DEFAULT_GATE_PX, DEFAULT_MAX_GAP};
pub use compare::{compare_tracks, read_gt_tracks, GtTrack, TrackComparison, TrackMatch};
pub use io::{to_trajectories_file, write_motility_csv, write_trajectories_json, TrajectoriesFile, TrajectoryRecord};
pub use motility::{
    motility, motility_report, moving_average, progressive_motility, Excluded, MotilityConfig, MotilityEntry, MotilityParams, MotilityReport,
    MotilityThresholds, VelocityUnit, DEFAULT_SMOOTH_WINDOW, DEFAULT_VAP_THRESHOLD_UM_S,
};
