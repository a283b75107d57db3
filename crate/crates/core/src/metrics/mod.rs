//! Detection metrics under the relaxed B1/B2/R matching rule.

mod ap;
mod crossval;
mod matching;
mod report;

pub use ap::{ap_from_ranked, pr_curve_and_ap, ApMode, ApResult, CurvePoint, FrameEval};
pub use crossval::{aggregate_values, crossval_aggregate, mean_std, CrossValSummary, MeanStd, StdevConvention};
pub use matching::{confidence_order, match_detections, GtBox, MatchCriterion, MatchResult, ScoredBox};
pub use report::{group_by_frame, label_frames, report, ClassAp, MetricReport};

pub use crate::geometry::iou;

/// Writes PR-curve points as CSV: `class,confidence,recall,precision,tp`.
pub fn write_pr_curve_csv<W: std::io::Write>(mut w: W, report: &MetricReport) -> std::io::Result<()> {
    writeln!(w, "class,confidence,recall,precision,tp")?;
    for c in &report.per_class {
        for p in &c.curve {
            writeln!(w, "{},{},{},{},{}", c.name, p.confidence, p.recall, p.precision, p.tp as u8)?;
        }
    }
    Ok(())
}
