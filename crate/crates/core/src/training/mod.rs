//! Soft-Dice training of the residual encoder U-Net on 2-D slices, the linear
//! learning-rate schedule and k-fold cross-validation.

mod cv;
mod data;
mod loss;
mod optimizer;
mod trainer;

use serde::{Deserialize, Serialize};

pub use cv::{run_cross_validation, CvMode, CvSummary, FoldRun, CV_SUMMARY, HIGHEST_FOLD_CONVENTION};
pub use data::{SliceDataset, TrainSlice};
pub use loss::{dice_loss_with_logits, soft_dice_loss, soft_dice_loss_grad};
pub use optimizer::{optimizer_step, Sgd};
pub use trainer::{
    evaluate_slices, predict_slices, predict_volume, train_fold, train_on_slices, EpochRecord, FoldResult, TrainState,
    BEST_CHECKPOINT, FINAL_CHECKPOINT, TRAIN_LOG,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub batch_size: usize,
    /// Defaults to `ceil(training slices / batch_size)`.
    pub iterations_per_epoch: Option<usize>,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub dice_smooth: f64,
    /// Pool Dice sums over the whole batch instead of averaging per-sample losses.
    pub batch_dice: bool,
    pub seed: u64,
    pub folds: usize,
    /// Folds held out for evaluation by [`run_cross_validation`].
    pub validation_folds: Vec<usize>,
    pub cv_mode: CvMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            initial_lr: 0.01,
            batch_size: 13,
            iterations_per_epoch: None,
            momentum: 0.99,
            nesterov: true,
            weight_decay: 3e-5,
            dice_smooth: 1e-5,
            batch_dice: true,
            seed: 0,
            folds: 5,
            validation_folds: vec![3, 4],
            cv_mode: CvMode::PerFoldModels,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!("initial_lr {} must be positive", self.initial_lr));
        }
        if self.iterations_per_epoch == Some(0) {
            return bad("iterations_per_epoch must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if !(self.dice_smooth >= 0.0 && self.dice_smooth.is_finite()) {
            return bad(format!("dice_smooth {} must be >= 0", self.dice_smooth));
        }
        if self.folds < 2 {
            return bad(format!("{} folds; need at least 2", self.folds));
        }
        if let Some(f) = self.validation_folds.iter().find(|&&f| f >= self.folds) {
            return bad(format!("validation fold {f} out of range for {} folds", self.folds));
        }
        Ok(())
    }

    pub fn sgd(&self) -> Sgd {
        Sgd {
            momentum: self.momentum,
            nesterov: self.nesterov,
            weight_decay: self.weight_decay,
        }
    }

    pub fn iterations_for(&self, training_slices: usize) -> usize {
        self.iterations_per_epoch
            .unwrap_or_else(|| training_slices.div_ceil(self.batch_size).max(1))
    }
}

/// The schedule as an exact fraction of `initial_lr`: `(epochs - epoch, epochs)`.
pub fn lr_fraction(epoch: usize, epochs: usize) -> Result<(usize, usize)> {
    if epoch >= epochs {
        return Err(Error::Contract(format!("epoch {epoch} outside 0..{epochs}")));
    }
    Ok((epochs - epoch, epochs))
}

/// Linearly decaying rate `initial_lr * (1 - epoch / epochs)`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> Result<f64> {
    let (num, den) = lr_fraction(epoch, config.epochs)?;
    Ok(config.initial_lr * num as f64 / den as f64)
}
