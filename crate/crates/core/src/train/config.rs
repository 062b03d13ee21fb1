use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Popularity-sampled negatives per training instance.
    pub negatives: usize,
    pub label_smoothing: f64,
    /// Loss weight for instances whose positive is absent from the history.
    pub explore_weight: f64,
    pub weight_decay: f64,
    /// Epochs without a validation MRR improvement before stopping.
    pub patience: usize,
    /// Add one pseudo-visit to every POI before sampling negatives.
    pub add_one_smoothing: bool,
    /// Uniformly sampled candidates per validation instance.
    pub val_pool_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            negatives: 99,
            label_smoothing: 0.0,
            explore_weight: 1.0,
            weight_decay: 0.01,
            patience: 5,
            add_one_smoothing: false,
            val_pool_size: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.negatives == 0 {
            return fail("negatives must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail(format!("label_smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if !(self.explore_weight >= 1.0 && self.explore_weight.is_finite()) {
            return fail(format!("explore_weight must be >= 1, got {}", self.explore_weight));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.val_pool_size < 2 {
            return fail("val_pool_size must be at least 2".into());
        }
        Ok(())
    }
}
