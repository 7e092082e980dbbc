//! Residual-dilated U-Net segmentation of the inner cell mass (ICM) and
//! trophectoderm (TE) in blastocyst images.
//!
//! The crate is layered bottom-up:
//!
//! * [`engine`]: tensors, reverse-mode autodiff and convolution kernels
//! * [`model`]: the encoder/decoder network and its checkpoint format
//! * [`data`]: loading, preprocessing, rotation augmentation, splits and
//!   synthetic phantoms
//! * [`train`]: BCE + soft-Jaccard loss, Adam, plateau LR reduction, early
//!   stopping and the epoch loop
//! * [`eval`]: pixel confusion counts, the five overlap metrics and
//!   per-image quality categories
//! * [`viz`]: verification overlays and report panels
//! * [`cli`]: the `blastoseg` command-line workflows

pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod model;
pub mod train;
pub mod viz;

pub use error::{Error, Result};

/// RNG used wherever a seed must reproduce a run bit for bit.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
