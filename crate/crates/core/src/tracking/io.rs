use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::associate::{Sample, Trajectory};
use super::motility::MotilityReport;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub class_id: usize,
    pub gap_count: usize,
    pub samples: Vec<Sample>,
}

/// Object id (as string key) → samples.
pub type TrajectoriesFile = BTreeMap<String, TrajectoryRecord>;

pub fn to_trajectories_file(trajectories: &[Trajectory]) -> TrajectoriesFile {
    trajectories
        .iter()
        .map(|t| (t.object_id.to_string(), TrajectoryRecord { class_id: t.class_id, gap_count: t.gap_count, samples: t.samples.clone() }))
        .collect()
}

pub fn write_trajectories_json<W: Write>(w: W, trajectories: &[Trajectory]) -> Result<()> {
    serde_json::to_writer_pretty(w, &to_trajectories_file(trajectories))?;
    Ok(())
}

/// `id,class,frames,vsl,vcl,vap,motile,unit`, one row per measured trajectory.
pub fn write_motility_csv<W: Write>(mut w: W, report: &MotilityReport) -> Result<()> {
    writeln!(w, "id,class,frames,vsl,vcl,vap,motile,unit")?;
    for e in &report.entries {
        writeln!(w, "{},{},{},{:.6},{:.6},{:.6},{},{}", e.object_id, e.class_id, e.n_samples, e.vsl, e.vcl, e.vap, e.motile, report.unit.as_str())?;
    }
    Ok(())
}
