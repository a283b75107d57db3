use std::path::PathBuf;

use clap::Parser;
use serde_json::json;
use tinydet_acceptance::{quick_checks, throughput, training_check, Outcome, TrainingPlan};
use tinydet_detector::{build_model_seeded, Detector, ModelConfig};

/// Runs every acceptance check and prints one PASS/FAIL line each.
#[derive(Parser)]
struct Args {
    /// Where the acceptance run manifest (with the throughput figure) goes.
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
    /// Skip the two training experiments; throughput then uses untrained weights.
    #[arg(long)]
    skip_training: bool,
    /// Print per-epoch progress to stderr.
    #[arg(short, long)]
    verbose: bool,
}

fn report(o: Outcome, all: &mut Vec<Outcome>) {
    println!("{o}");
    all.push(o);
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let mut all = Vec::new();
    for o in quick_checks() {
        report(o, &mut all);
    }
    let mut progress = |line: &str| {
        if args.verbose {
            eprintln!("{line}");
        }
    };
    let overfit = TrainingPlan::overfit();
    let general = TrainingPlan::generalization();
    let mut det = None;
    if !args.skip_training {
        let (o, _) = training_check("overfit_sanity", &overfit, &mut progress);
        report(o, &mut all);
        let (o, d) = training_check("desk_scale_generalization", &general, &mut progress);
        report(o, &mut all);
        det = d;
    }
    let det = match det {
        Some(d) => d,
        None => {
            let model = build_model_seeded(ModelConfig::with_input_size(general.input_size), 0)?;
            Detector::new(
                model,
                tinydet_core::ingest::AnchorSet::new(vec![(4.0, 4.0), (6.0, 5.0), (5.0, 7.0), (8.0, 6.0), (7.0, 9.0), (10.0, 10.0)])?,
            )?
        }
    };
    let plans = json!({ "overfit": overfit, "generalization": general, "skip_training": args.skip_training });
    let o = throughput(&det, &args.runs_dir, &all, &plans);
    report(o, &mut all);
    let failed = all.iter().filter(|o| !o.pass).count();
    println!("{} of {} checks passed", all.len() - failed, all.len());
    std::process::exit(if failed == 0 { 0 } else { 1 });
}
