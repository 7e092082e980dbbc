//! Optimisation recipe: BCE + soft-Jaccard loss, Adam, learning-rate
//! reduction on plateau, early stopping and the epoch loop.

mod adam;
mod fit;
mod loss;
mod schedule;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamState};
pub use fit::{batch_ranges, fit, EpochRecord, FitReport, LOG_HEADER};
pub use loss::{loss_bce_jaccard, PROB_CLAMP, SOFT_JACCARD_EPS};
pub use schedule::{Decision, EarlyStopping, PlateauTracker, ReduceLrOnPlateau, MIN_DELTA};

/// Quantity watched by the plateau and early-stopping callbacks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    #[default]
    Loss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr0: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub threshold: f64,
    pub seed: u64,
    pub monitor: Monitor,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            max_epochs: 200,
            lr0: 1e-4,
            lr_factor: 0.95,
            lr_patience: 5,
            early_stop_patience: 15,
            threshold: 0.5,
            seed: 0,
            monitor: Monitor::Loss,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, reason: &str| {
            if ok { Ok(()) } else { Err(Error::config(field, reason)) }
        };
        check(self.batch_size >= 1, "batch_size", "must be at least 1")?;
        check(self.max_epochs >= 1, "max_epochs", "must be at least 1")?;
        check(self.lr0 > 0.0 && self.lr0.is_finite(), "lr0", "must be positive and finite")?;
        check(self.lr_factor > 0.0 && self.lr_factor < 1.0, "lr_factor", "must lie in (0, 1)")?;
        check(self.lr_patience >= 1, "lr_patience", "must be at least 1")?;
        check(self.early_stop_patience >= 1, "early_stop_patience", "must be at least 1")?;
        check(self.threshold > 0.0 && self.threshold < 1.0, "threshold", "must lie in (0, 1)")
    }
}
