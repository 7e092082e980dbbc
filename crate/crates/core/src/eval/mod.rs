//! Pixel-level overlap metrics, threshold binarization, per-image quality
//! bands and test-set reports.

mod report;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Target;
use crate::engine::{Real, Tensor};
use crate::error::{Error, Result};

pub use report::{evaluate_set, Evaluation, ImageReport, MetricsReport, Segmenter};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Foreground where `prob >= threshold`.
pub fn binarize<T: Real>(prob: &Tensor<T>, threshold: f64) -> Result<Tensor<T>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::param(format!("threshold {threshold} must lie in (0, 1)")));
    }
    let t = T::of(threshold);
    Ok(prob.map(|p| if p >= t { T::one() } else { T::zero() }))
}

/// Pixel tallies of a prediction against ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

pub fn confusion<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<ConfusionCounts> {
    if pred.shape() != truth.shape() {
        return Err(Error::dim(format!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.shape(),
            truth.shape()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(truth.data()) {
        let (p, g) = (bit(p, "prediction")?, bit(g, "ground truth")?);
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn bit<T: Real>(v: T, what: &str) -> Result<bool> {
    if v == T::one() {
        Ok(true)
    } else if v == T::zero() {
        Ok(false)
    } else {
        Err(Error::param(format!("{what} mask holds non-binary value {v}")))
    }
}

/// The five overlap metrics, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub dice: f64,
    pub jaccard: f64,
}

impl Metrics {
    /// Empty denominators resolve to 1 when there is nothing to get wrong
    /// and to 0 otherwise.
    pub fn from_counts(c: &ConfusionCounts) -> Result<Self> {
        if c.total() == 0 {
            return Err(Error::param("metrics of an empty confusion table"));
        }
        let [tp, fp, tn, fn_] = [c.tp, c.fp, c.tn, c.fn_].map(|v| v as f64);
        let precision = match (c.tp + c.fp, c.fn_) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            _ => tp / (tp + fp),
        };
        let recall = match (c.tp + c.fn_, c.fp) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            _ => tp / (tp + fn_),
        };
        let (dice, jaccard) = if c.tp + c.fp + c.fn_ == 0 {
            (1.0, 1.0)
        } else {
            (2.0 * tp / (2.0 * tp + fp + fn_), tp / (tp + fp + fn_))
        };
        Ok(Metrics {
            accuracy: (tp + tn) / (tp + fp + tn + fn_),
            precision,
            recall,
            dice,
            jaccard,
        })
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.accuracy, self.precision, self.recall, self.dice, self.jaccard]
    }

    /// Unweighted mean over a non-empty list.
    pub fn mean(all: &[Metrics]) -> Option<Metrics> {
        if all.is_empty() {
            return None;
        }
        let n = all.len() as f64;
        let sum = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / n;
        Some(Metrics {
            accuracy: sum(|m| m.accuracy),
            precision: sum(|m| m.precision),
            recall: sum(|m| m.recall),
            dice: sum(|m| m.dice),
            jaccard: sum(|m| m.jaccard),
        })
    }
}

pub fn metrics<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<Metrics> {
    Metrics::from_counts(&confusion(pred, truth)?)
}

/// Quality band of one image by its Jaccard index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Best,
    Better,
    Fair,
    Below,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Best, Category::Better, Category::Fair, Category::Below];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Best => "best",
            Category::Better => "better",
            Category::Fair => "fair",
            Category::Below => "below",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lower band edges (exclusive) for best, better and fair.
pub fn band_edges(target: Target) -> [f64; 3] {
    match target {
        Target::Icm => [0.97, 0.92, 0.77],
        Target::Te => [0.94, 0.87, 0.76],
    }
}

/// A value on an edge falls into the lower band.
pub fn categorize(jaccard: f64, target: Target) -> Category {
    let [best, better, fair] = band_edges(target);
    if jaccard > best {
        Category::Best
    } else if jaccard > better {
        Category::Better
    } else if jaccard > fair {
        Category::Fair
    } else {
        Category::Below
    }
}
