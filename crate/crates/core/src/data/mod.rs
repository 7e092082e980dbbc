//! Image/mask samples: loading, preprocessing, rotation augmentation,
//! leakage-free splitting and synthetic blastocyst phantoms.

mod augment;
mod io;
mod phantom;
mod preprocess;
mod split;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{Error, Result};

pub use augment::{augment_dataset, augment_rotations, rotate_image, rotate_mask, rotate_sample, rotated_id};
pub use io::{
    list_images, load_dataset, read_gray, read_mask, write_gray8, write_mask, DatasetLayout,
    IMAGE_DIR,
};
pub use phantom::{generate_phantoms, phantom_dataset, write_phantoms, Phantom};
pub use preprocess::{preprocess, resize_bilinear, resize_nearest, resize_sample, zscore};
pub use split::{epoch_order, split_and_shuffle, EpochOrders};

/// Segmentation target region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Inner cell mass.
    Icm,
    /// Trophectoderm.
    Te,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Icm => "icm",
            Target::Te => "te",
        }
    }

    /// Directory holding this target's masks in a dataset layout.
    pub fn mask_dir(self) -> &'static str {
        match self {
            Target::Icm => "masks_icm",
            Target::Te => "masks_te",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "icm" => Ok(Target::Icm),
            "te" => Ok(Target::Te),
            other => Err(Error::config("target", format!("unknown target `{other}` (icm|te)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Provenance {
    Original,
    Rotated { degrees: u32 },
    Synthetic,
}

/// One image with its binary ground-truth mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Id of the unaugmented image this sample derives from; equal to `id`
    /// for originals.
    pub origin: String,
    /// `[C, H, W]`
    pub image: Tensor<f32>,
    /// `[1, H, W]`, values exactly 0 or 1.
    pub mask: Tensor<f32>,
    pub provenance: Provenance,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: Tensor<f32>, provenance: Provenance) -> Result<Self> {
        let id = id.into();
        if image.rank() != 3 || mask.rank() != 3 || mask.shape()[0] != 1 {
            return Err(Error::dim(format!(
                "sample `{id}`: image must be [C,H,W] and mask [1,H,W], got {:?} and {:?}",
                image.shape(),
                mask.shape()
            )));
        }
        if image.shape()[1..] != mask.shape()[1..] {
            return Err(Error::dim(format!(
                "sample `{id}`: image {:?} and mask {:?} differ spatially",
                image.shape(),
                mask.shape()
            )));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::param(format!("sample `{id}`: mask is not binary")));
        }
        Ok(Sample {
            origin: id.clone(),
            id,
            image,
            mask,
            provenance,
        })
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn foreground(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v == 1.0).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Train,
    Test,
}

/// Samples plus their train/test assignment, keyed by origin so that every
/// derived copy of an image follows it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataSet {
    pub samples: Vec<Sample>,
    pub assignment: BTreeMap<String, Partition>,
    pub seed: u64,
}

impl DataSet {
    pub fn new(samples: Vec<Sample>) -> Self {
        DataSet {
            samples,
            assignment: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct origin ids in first-appearance order.
    pub fn origins(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.samples
            .iter()
            .map(|s| s.origin.as_str())
            .filter(|o| seen.insert(*o))
            .collect()
    }

    pub fn partition_of(&self, sample: &Sample) -> Option<Partition> {
        self.assignment.get(&sample.origin).copied()
    }

    pub fn train(&self) -> Vec<&Sample> {
        self.in_partition(Partition::Train)
    }

    pub fn test(&self) -> Vec<&Sample> {
        self.in_partition(Partition::Test)
    }

    fn in_partition(&self, p: Partition) -> Vec<&Sample> {
        self.samples
            .iter()
            .filter(|s| self.partition_of(s) == Some(p))
            .collect()
    }
}
