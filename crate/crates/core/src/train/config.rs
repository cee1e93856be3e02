use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::ModelConfig;

/// Pre-training hyperparameters; the JSON config file mirrors this struct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    /// Final value of the cosine weight-decay ramp (which starts at 0).
    pub weight_decay_end: f64,
    pub tau: f64,
    /// Weight of the contrastive term.
    pub lambda: f64,
    pub momentum_start: f64,
    pub momentum_end: f64,
    pub mask_ratio: f64,
    pub val_fraction: f64,
    /// Global gradient-norm limit.
    pub clip_norm: f64,
    pub seed: u64,
    pub workers: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            peak_lr: 5e-4,
            weight_decay_end: 1e-6,
            tau: 0.1,
            lambda: 1.0,
            momentum_start: 0.996,
            momentum_end: 1.0,
            mask_ratio: 0.5,
            val_fraction: 0.1,
            clip_norm: 1.0,
            seed: 0,
            workers: 1,
            model: ModelConfig::tiny8(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(invalid("train.epochs must be positive"));
        }
        if self.batch_size < 2 {
            return Err(invalid(format!(
                "train.batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return Err(invalid("train.peak_lr must be finite and non-negative"));
        }
        if !(self.weight_decay_end >= 0.0) {
            return Err(invalid("train.weight_decay_end must be non-negative"));
        }
        if !(self.tau > 0.0) {
            return Err(invalid("train.tau must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(invalid("train.lambda must be non-negative"));
        }
        if !(0.0 <= self.momentum_start
            && self.momentum_start <= self.momentum_end
            && self.momentum_end <= 1.0)
        {
            return Err(invalid(
                "train.momentum_start ≤ train.momentum_end must lie in [0, 1]",
            ));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(invalid("train.mask_ratio must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(invalid("train.val_fraction must lie in [0, 1)"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(invalid("train.clip_norm must be positive"));
        }
        Ok(())
    }
}
