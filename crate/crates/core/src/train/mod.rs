//! Losses, optimizers, schedules, folds, patch sampling and training loops.

mod folds;
mod loss;
mod optim;
mod runner;
mod sampling;

pub use folds::{make_folds, make_folds_from_keys, FoldKey, FoldSplit, Stratum, FOLD_COUNT};
pub use loss::{deep_supervision_weights, loss_bce, loss_deep_supervision, loss_dice_ce, DICE_EPSILON};
pub use optim::{
    optimizer_step, OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, SGD_MOMENTUM, SGD_WEIGHT_DECAY,
};
pub use runner::{
    classifier_input, overfit_classifier, overfit_segmenter, predict_tracer_logit, segmentation_targets,
    train_classifier, train_segmenter, EpochRecord, NoHooks, OverfitSettings, TrainHooks, TrainOutcome,
    DIVERGENCE_LIMIT,
};
pub use sampling::{sample_patch, Patch, PatchSampler};

use alloc::string::String;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalError;
use crate::nn::NnError;
use crate::preprocess::PreprocessError;
use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("need at least {need} subjects, got {got}")]
    TooFewSubjects { need: usize, got: usize },
    #[error("duplicate subject id {0}")]
    DuplicateId(String),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("loss diverged to {loss} at epoch {epoch}, iteration {iter}")]
    Divergence { epoch: usize, iter: usize, loss: f64 },
    #[error("optimizer state does not match the parameters")]
    StateMismatch,
    #[error("epoch {epoch} outside [0, {max})")]
    OutOfRange { epoch: usize, max: usize },
    #[error("empty list")]
    EmptyList,
    #[error("fold {fold} outside [0, {count})")]
    InvalidFold { fold: usize, count: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Poly,
    Constant,
}

/// Exponent of the polynomial decay.
pub const POLY_EXPONENT: f64 = 0.9;

/// Learning rate of `epoch` (0-based) out of `max_epochs`.
pub fn lr_schedule(schedule: Schedule, epoch: usize, max_epochs: usize, lr0: f64) -> Result<f64, TrainError> {
    if epoch >= max_epochs {
        return Err(TrainError::OutOfRange { epoch, max: max_epochs });
    }
    Ok(match schedule {
        Schedule::Constant => lr0,
        Schedule::Poly => lr0 * num_traits::Float::powf(1.0 - epoch as f64 / max_epochs as f64, POLY_EXPONENT),
    })
}

/// Hyperparameters of one training run.
///
/// `patch_size` is in volume axis order (x, y, z). For the classifier it is
/// the resize target of the PET volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None` means one pass over the training subjects: `ceil(n_train / batch)`.
    pub iters_per_epoch: Option<usize>,
    /// `None` validates on whole held-out volumes instead of sampled patches.
    pub val_iters_per_epoch: Option<usize>,
    pub batch_size: usize,
    pub patch_size: [usize; 3],
    pub lr_initial: f64,
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
    pub weight_decay: f64,
    pub seed: u64,
    pub fg_oversample: f64,
}

pub const DEFAULT_FG_OVERSAMPLE: f64 = 0.5;

impl TrainConfig {
    pub fn paper_segresnet() -> Self {
        Self {
            epochs: 600,
            iters_per_epoch: None,
            val_iters_per_epoch: None,
            batch_size: 4,
            patch_size: [128, 128, 96],
            lr_initial: 1e-4,
            optimizer: OptimizerKind::Adam,
            schedule: Schedule::Constant,
            weight_decay: 0.0,
            seed: 0,
            fg_oversample: DEFAULT_FG_OVERSAMPLE,
        }
    }

    pub fn paper_resenc() -> Self {
        Self {
            epochs: 1500,
            iters_per_epoch: Some(250),
            val_iters_per_epoch: Some(50),
            batch_size: 2,
            patch_size: [224, 160, 192],
            lr_initial: 1e-2,
            optimizer: OptimizerKind::SgdNesterov,
            schedule: Schedule::Poly,
            weight_decay: SGD_WEIGHT_DECAY,
            seed: 0,
            fg_oversample: DEFAULT_FG_OVERSAMPLE,
        }
    }

    /// Batch size is not given for this profile; 2 matches the segmenter
    /// trained with the same per-iteration budget.
    pub fn paper_classifier() -> Self {
        Self {
            epochs: 50,
            iters_per_epoch: Some(250),
            val_iters_per_epoch: None,
            batch_size: 2,
            patch_size: [400, 400, 326],
            lr_initial: 1e-4,
            optimizer: OptimizerKind::Adam,
            schedule: Schedule::Constant,
            weight_decay: 0.0,
            seed: 0,
            fg_oversample: 0.0,
        }
    }

    /// Desk-scale segmentation: 32³ patches, 30 epochs.
    pub fn desk_segmenter() -> Self {
        Self {
            epochs: 30,
            iters_per_epoch: Some(10),
            val_iters_per_epoch: Some(4),
            batch_size: 2,
            patch_size: [32, 32, 32],
            lr_initial: 3e-3,
            optimizer: OptimizerKind::Adam,
            schedule: Schedule::Poly,
            weight_decay: 0.0,
            seed: 0,
            fg_oversample: 0.6,
        }
    }

    /// Desk-scale classification on PET resized to 64³.
    pub fn desk_classifier() -> Self {
        Self {
            epochs: 15,
            iters_per_epoch: Some(20),
            val_iters_per_epoch: None,
            batch_size: 4,
            patch_size: [64, 64, 64],
            lr_initial: 1e-2,
            optimizer: OptimizerKind::Adam,
            schedule: Schedule::Poly,
            weight_decay: 0.0,
            seed: 0,
            fg_oversample: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::ConfigMismatch(m));
        if self.epochs == 0 || self.batch_size == 0 || self.iters_per_epoch == Some(0) {
            return bad("epochs, batch size and iterations must be positive".into());
        }
        if self.patch_size.contains(&0) {
            return bad(alloc::format!("patch size {:?}", self.patch_size));
        }
        if !(0.0..=1.0).contains(&self.fg_oversample) {
            return bad(alloc::format!("fg_oversample {} outside [0, 1]", self.fg_oversample));
        }
        if !(self.lr_initial >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate and weight decay must be non-negative".into());
        }
        Ok(())
    }
}
