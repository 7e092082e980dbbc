//! Dense tensors, reverse-mode autodiff and the convolutional primitives the
//! segmentation network is assembled from.

pub mod conv;
pub mod gradcheck;
mod tape;
mod tensor;

pub use conv::{Conv2dOptions, Padding};
pub use tape::{ActivationPattern, BatchNormState, BatchStats, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
