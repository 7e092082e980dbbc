use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of the residual-dilated U-Net.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub depth: usize,
    pub base_kernels: usize,
    pub encoder_kernels: Vec<usize>,
    pub decoder_kernels: Vec<usize>,
    pub dilation_rates: Vec<usize>,
    pub bottleneck_channels: usize,
    pub input_channels: usize,
    pub dropout_rate: f64,
    pub image_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 4,
            base_kernels: 16,
            encoder_kernels: vec![16, 32, 64, 128],
            decoder_kernels: vec![128, 64, 32, 16],
            dilation_rates: vec![1, 2, 4, 8],
            bottleneck_channels: 256,
            input_channels: 1,
            dropout_rate: 0.05,
            image_size: 256,
        }
    }
}

impl ModelConfig {
    /// A width-scaled variant: encoder widths `base·2^i` for `i < depth`,
    /// bottleneck twice the deepest encoder width.
    pub fn scaled(depth: usize, base_kernels: usize, image_size: usize) -> Self {
        let encoder_kernels: Vec<usize> = (0..depth).map(|i| base_kernels << i).collect();
        let mut decoder_kernels = encoder_kernels.clone();
        decoder_kernels.reverse();
        ModelConfig {
            depth,
            base_kernels,
            bottleneck_channels: encoder_kernels.last().copied().unwrap_or(base_kernels) * 2,
            encoder_kernels,
            decoder_kernels,
            image_size,
            ..ModelConfig::default()
        }
    }

    /// Spatial factor between the input and the bottleneck.
    pub fn downsampling(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 16 {
            return Err(Error::config("depth", "must be between 1 and 16"));
        }
        if self.encoder_kernels.len() != self.depth {
            return Err(Error::config(
                "encoder_kernels",
                format!("expected {} entries (depth), got {}", self.depth, self.encoder_kernels.len()),
            ));
        }
        if self.encoder_kernels.contains(&0) {
            return Err(Error::config("encoder_kernels", "widths must be positive"));
        }
        if self.encoder_kernels[0] != self.base_kernels {
            return Err(Error::config(
                "base_kernels",
                "must equal the first encoder width",
            ));
        }
        let reversed: Vec<usize> = self.encoder_kernels.iter().rev().copied().collect();
        if self.decoder_kernels != reversed {
            return Err(Error::config(
                "decoder_kernels",
                format!("must be the reverse of encoder_kernels ({reversed:?})"),
            ));
        }
        if self.dilation_rates.is_empty() || self.dilation_rates[0] != 1 {
            return Err(Error::config("dilation_rates", "must start at 1"));
        }
        let powers = self
            .dilation_rates
            .windows(2)
            .all(|w| w[1] > w[0] && w[1].is_power_of_two());
        if !powers {
            return Err(Error::config(
                "dilation_rates",
                "must be strictly increasing powers of two",
            ));
        }
        if self.bottleneck_channels == 0 {
            return Err(Error::config("bottleneck_channels", "must be positive"));
        }
        if self.input_channels == 0 {
            return Err(Error::config("input_channels", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate", "must lie in [0, 1)"));
        }
        if self.image_size == 0 || self.image_size % self.downsampling() != 0 {
            return Err(Error::config(
                "image_size",
                format!("must be a positive multiple of 2^depth = {}", self.downsampling()),
            ));
        }
        Ok(())
    }
}
