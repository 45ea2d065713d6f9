use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Inverse-time decay coefficient: the step size at step `t` is
    /// `lr / (1 + decay·t)`.
    pub decay: f64,
    /// Coefficient of the squared-norm penalty.
    pub l2: f64,
    /// Penalize every weight matrix instead of only the two head layers.
    pub l2_all_weights: bool,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 56,
            lr: 1e-3,
            decay: 1e-6,
            l2: 0.01,
            l2_all_weights: false,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, v) in [("decay", self.decay), ("l2", self.l2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}
