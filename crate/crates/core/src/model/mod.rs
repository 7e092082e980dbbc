//! The residual-dilated U-Net and its on-disk checkpoint format.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{Checkpoint, TrainingMeta, FORMAT_VERSION, MAGIC};
pub use config::ModelConfig;
pub use network::{random_batch, ForwardPass, Model, NormBuffers, Parameter};
