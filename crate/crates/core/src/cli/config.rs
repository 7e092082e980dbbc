use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Target;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataOptions {
    /// Dataset root holding `images/`, `masks_icm/` and `masks_te/`.
    pub data_dir: Option<PathBuf>,
    pub target: Target,
    pub train_fraction: f64,
    /// Rotation increment in degrees; 360 disables augmentation.
    pub rotation_step: u32,
}

impl Default for DataOptions {
    fn default() -> Self {
        DataOptions {
            data_dir: None,
            target: Target::Icm,
            train_fraction: 0.85,
            rotation_step: 10,
        }
    }
}

/// Everything a training run depends on. Images are resized to
/// `model.image_size`; `seed` drives initialisation, split, shuffling and
/// dropout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataOptions,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataOptions::default(),
            out_dir: PathBuf::from("runs/latest"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Copies the run seed into the training section.
    pub fn resolve(mut self) -> Self {
        self.train.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(Error::config("data.train_fraction", "must lie in (0, 1)"));
        }
        if d.rotation_step == 0 || 360 % d.rotation_step != 0 {
            return Err(Error::config("data.rotation_step", "must be a positive divisor of 360"));
        }
        Ok(())
    }
}
