//! Two-phase training: backbone frozen, then all layers; Adam with cosine
//! annealing inside each phase, early stopping on validation loss and the
//! best weights kept.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tinydet_core::ingest::AnchorSet;

use crate::data::Sample;
use crate::error::{DetectorError, Result};
use crate::loss::{total_loss, LossComponents};
use crate::model::{Model, ParamGroup};
use crate::optim::Adam;
use crate::preprocess::batch;
use crate::targets::{encode_targets, TargetTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub freeze_backbone: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
    /// Epochs without validation improvement tolerated before a phase stops.
    pub patience: usize,
    /// Random horizontal/vertical flips of training samples.
    pub augment: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            phase1: PhaseConfig { batch_size: 16, epochs: 50, lr: 1e-3, freeze_backbone: true },
            phase2: PhaseConfig { batch_size: 4, epochs: 100, lr: 1e-4, freeze_backbone: false },
            patience: 10,
            augment: true,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        for p in [&self.phase1, &self.phase2] {
            if p.batch_size == 0 || !(p.lr > 0.0 && p.lr.is_finite()) {
                return Err(DetectorError::Config(format!("phase needs a positive batch size and learning rate: {p:?}")));
            }
        }
        Ok(())
    }
}

/// Cosine-annealed learning rate for `epoch` of a phase of `epochs`.
pub fn cosine_lr(lr0: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        return lr0;
    }
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Counted across both phases, from 1.
    pub epoch: usize,
    pub phase: u8,
    pub lr: f64,
    /// Mean per image.
    pub train: LossComponents,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    /// Per phase, whether patience ran out before the planned epochs.
    pub stopped_early: [bool; 2],
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub seed: u64,
    /// Where a diagnostic dump goes when a loss turns non-finite.
    pub dump_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct NonFiniteDump<'a> {
    what: &'a str,
    phase: u8,
    epoch: usize,
    frames: Vec<String>,
    per_image: Vec<LossComponents>,
    input_finite: Vec<bool>,
}

pub fn write_history_csv<W: Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch,phase,lr,train_localization,train_confidence,train_classification,train_loss,val_loss")?;
    for r in history {
        writeln!(
            w,
            "{},{},{:e},{},{},{},{},{}",
            r.epoch,
            r.phase,
            r.lr,
            r.train.localization,
            r.train.confidence,
            r.train.classification,
            r.train.total(),
            r.val_loss
        )?;
    }
    Ok(())
}

fn targets_for(model: &Model, anchors: &AnchorSet, s: &Sample) -> Result<TargetTensor> {
    encode_targets(&s.boxes, anchors, model.geometry())
}

/// Forward, per-image loss and (when `grads` is given) backward for one batch.
fn run_batch(
    model: &Model,
    anchors: &AnchorSet,
    samples: &[&Sample],
    backward: Option<(&mut crate::model::Grads, &dyn Fn(ParamGroup) -> bool)>,
) -> Result<Vec<LossComponents>> {
    let size = model.config.input_size;
    let inputs: Vec<&[f32]> = samples.iter().map(|s| s.input.as_slice()).collect();
    let acts = model.forward_train(&batch(&inputs, size))?;
    let out = acts.output(model);
    let mut per_image = Vec::with_capacity(samples.len());
    let mut grid_grads = Vec::with_capacity(samples.len());
    let scale = 1.0 / samples.len() as f64;
    for (i, s) in samples.iter().enumerate() {
        let pred = model.to_grid(out, i).or_else(|_| {
            // Keep non-finite outputs visible to the caller as a non-finite loss.
            Ok::<_, DetectorError>(tinydet_core::grid::GridPrediction { geometry: model.geometry(), values: vec![f64::NAN; model.geometry().len()] })
        })?;
        let target = targets_for(model, anchors, s)?;
        let (comp, g) = total_loss(&pred, &target, anchors)?;
        per_image.push(comp);
        if backward.is_some() {
            grid_grads.push(g.total().into_iter().map(|v| v * scale).collect());
        }
    }
    if let Some((grads, trainable)) = backward {
        let d_out = model.grid_grads_to_tensor(&grid_grads);
        model.backward(&acts, d_out, grads, trainable);
    }
    Ok(per_image)
}

/// Mean per-image total loss over `samples`.
pub fn evaluate_loss(model: &Model, anchors: &AnchorSet, samples: &[Sample], batch_size: usize) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        sum += run_batch(model, anchors, &refs, None)?.iter().map(|c| c.total()).sum::<f64>();
    }
    Ok(sum / samples.len() as f64)
}

fn dump_batch(
    opts: &TrainOptions,
    what: &'static str,
    phase: u8,
    epoch: usize,
    samples: &[&Sample],
    per_image: Vec<LossComponents>,
) -> Option<PathBuf> {
    let dir = opts.dump_dir.as_ref()?;
    let dump = NonFiniteDump {
        what,
        phase,
        epoch,
        frames: samples.iter().map(|s| format!("{}#{}", s.frame_ref.source_id, s.frame_ref.index)).collect(),
        per_image,
        input_finite: samples.iter().map(|s| s.input.iter().all(|v| v.is_finite())).collect(),
    };
    let path = dir.join(format!("nonfinite_phase{phase}_epoch{epoch}.json"));
    std::fs::create_dir_all(dir).ok()?;
    std::fs::write(&path, serde_json::to_vec_pretty(&dump).ok()?).ok()?;
    Some(path)
}

/// Trains `model` in place and leaves it holding the best weights seen on
/// the validation set. `on_epoch` observes every finished epoch.
pub fn train(
    model: &mut Model,
    anchors: &AnchorSet,
    train_set: &[Sample],
    val_set: &[Sample],
    schedule: &TrainSchedule,
    opts: &TrainOptions,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Model),
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(DetectorError::Data("training and validation sets must be non-empty".into()));
    }
    for s in train_set.iter().chain(val_set) {
        if s.size != model.config.input_size {
            return Err(DetectorError::Shape(format!("sample prepared for {} px, model takes {}", s.size, model.config.input_size)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params: Vec<Vec<f32>> = model.params.iter().map(|p| p.data.clone()).collect();
    let mut stopped_early = [false; 2];
    let mut epoch_counter = 0;

    for (pi, phase) in [schedule.phase1, schedule.phase2].into_iter().enumerate() {
        let phase_no = pi as u8 + 1;
        let freeze = phase.freeze_backbone;
        let trainable = move |g: ParamGroup| !(freeze && g == ParamGroup::Backbone);
        let mut adam = Adam::new(model);
        let mut grads = model.zero_grads();
        let mut since_best = 0;
        for e in 0..phase.epochs {
            let start = Instant::now();
            epoch_counter += 1;
            let lr = cosine_lr(phase.lr, e, phase.epochs);
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            order.shuffle(&mut rng);
            let flips: Vec<(bool, bool)> = order.iter().map(|_| if schedule.augment { (rng.gen(), rng.gen()) } else { (false, false) }).collect();
            let mut sum = LossComponents::default();
            for (chunk, chunk_flips) in order.chunks(phase.batch_size).zip(flips.chunks(phase.batch_size)) {
                let flipped: Vec<Sample> =
                    chunk.iter().zip(chunk_flips).filter(|(_, f)| f.0 || f.1).map(|(&i, &(h, v))| train_set[i].flipped(h, v)).collect();
                let mut fi = flipped.iter();
                let refs: Vec<&Sample> = chunk
                    .iter()
                    .zip(chunk_flips)
                    .map(|(&i, f)| if f.0 || f.1 { fi.next().expect("flipped sample") } else { &train_set[i] })
                    .collect();
                grads.zero();
                let per_image = run_batch(model, anchors, &refs, Some((&mut grads, &trainable)))?;
                let mut batch_sum = LossComponents::default();
                for c in &per_image {
                    batch_sum.add(c);
                }
                if !batch_sum.is_finite() || grads.0.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                    let dump = dump_batch(opts, "training loss", phase_no, epoch_counter, &refs, per_image);
                    return Err(DetectorError::NonFinite { what: "training loss", phase: phase_no, epoch: epoch_counter, dump });
                }
                sum.add(&batch_sum);
                adam.step(model, &grads, lr, &trainable);
            }
            let val_loss = evaluate_loss(model, anchors, val_set, phase.batch_size.max(8))?;
            if !val_loss.is_finite() {
                let refs: Vec<&Sample> = val_set.iter().collect();
                let per_image = refs.iter().map(|s| run_batch(model, anchors, &[s], None).map(|v| v[0]).unwrap_or_default()).collect();
                let dump = dump_batch(opts, "validation loss", phase_no, epoch_counter, &refs, per_image);
                return Err(DetectorError::NonFinite { what: "validation loss", phase: phase_no, epoch: epoch_counter, dump });
            }
            let record = EpochRecord {
                epoch: epoch_counter,
                phase: phase_no,
                lr,
                train: sum.scale(1.0 / train_set.len() as f64),
                val_loss,
                seconds: start.elapsed().as_secs_f64(),
            };
            log::info!(
                "phase {} epoch {} lr {:.2e} train {:.4} (loc {:.4} conf {:.4} cls {:.4}) val {:.4}",
                phase_no,
                record.epoch,
                lr,
                record.train.total(),
                record.train.localization,
                record.train.confidence,
                record.train.classification,
                val_loss
            );
            on_epoch(&record, model);
            history.push(record);
            if val_loss < best_val {
                best_val = val_loss;
                best_epoch = epoch_counter;
                for (b, p) in best_params.iter_mut().zip(&model.params) {
                    b.copy_from_slice(&p.data);
                }
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > schedule.patience {
                    stopped_early[pi] = e + 1 < phase.epochs;
                    break;
                }
            }
        }
        for (p, b) in model.params.iter_mut().zip(&best_params) {
            p.data.copy_from_slice(b);
        }
    }
    Ok(TrainOutcome { history, best_val_loss: best_val, best_epoch, stopped_early })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_never_exceeds_initial() {
        for e in 0..50 {
            let lr = cosine_lr(1e-3, e, 50);
            assert!(lr <= 1e-3 && lr > 0.0);
        }
        assert_eq!(cosine_lr(1e-3, 0, 50), 1e-3);
        assert!(cosine_lr(1e-3, 25, 50) - 5e-4 < 1e-15);
    }
}
