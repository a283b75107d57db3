//! Single-head, anchor-based convolutional detector for tiny objects:
//! network, target encoding, CIoU + cross-entropy loss and two-phase training.
//!
//! The engine is a small f32 NCHW graph with hand-written backward passes;
//! the loss is evaluated in f64.

pub mod checkpoint;
pub mod data;
pub mod dual;
pub mod error;
pub mod inference;
pub mod loss;
pub mod model;
pub mod ops;
pub mod optim;
pub mod preprocess;
pub mod synthetic;
pub mod targets;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use error::{DetectorError, Result};
pub use inference::Detector;
pub use loss::{ciou_loss, ciou_loss_grad, total_loss, LossComponents};
pub use model::{build_model, build_model_seeded, Model, ModelConfig, ParamGroup};
pub use targets::{encode_targets, TargetBox, TargetTensor};
pub use tensor::Tensor;
pub use train::{train, EpochRecord, PhaseConfig, TrainOptions, TrainOutcome, TrainSchedule};
