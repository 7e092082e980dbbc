use std::fmt::Write as _;

use rayon::prelude::*;

use super::{binarize, categorize, confusion, Category, ConfusionCounts, Metrics};
use crate::data::{Sample, Target};
use crate::engine::{Real, Tensor};
use crate::error::{Error, Result};
use crate::model::Model;

/// Anything that maps a `[C, H, W]` image to a `[1, H, W]` foreground
/// probability map.
pub trait Segmenter: Sync {
    fn probabilities(&self, image: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl<T: Real> Segmenter for Model<T> {
    fn probabilities(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        let [c, h, w] = match image.shape() {
            &[c, h, w] => [c, h, w],
            s => return Err(Error::dim(format!("expected a [C,H,W] image, got {s:?}"))),
        };
        let batch = image.cast::<T>().reshape(vec![1, c, h, w])?;
        self.predict(&batch)?.cast::<f32>().reshape(vec![1, h, w])
    }
}

impl<F> Segmenter for F
where
    F: Fn(&Tensor<f32>) -> Result<Tensor<f32>> + Sync,
{
    fn probabilities(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        self(image)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageReport {
    pub id: String,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub category: Category,
}

/// Per-image metrics of one target over a test set.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub target: Target,
    pub threshold: f64,
    pub images: Vec<ImageReport>,
}

pub const CSV_HEADER: &str = "id,target,accuracy,precision,recall,dice,jaccard,category";
const TABLE_COLUMNS: [&str; 5] = [
    "Accuracy (%)",
    "Precision (%)",
    "Recall (%)",
    "Dice Coefficient (%)",
    "Jaccard Index (%)",
];

impl MetricsReport {
    /// Builds a report from binary predictions and ground truths.
    pub fn from_masks(
        target: Target,
        threshold: f64,
        items: &[(&str, &Tensor<f32>, &Tensor<f32>)],
    ) -> Result<Self> {
        let images = items
            .iter()
            .map(|&(id, pred, truth)| {
                let counts = confusion(pred, truth)?;
                let metrics = Metrics::from_counts(&counts)?;
                Ok(ImageReport {
                    id: id.to_string(),
                    counts,
                    metrics,
                    category: categorize(metrics.jaccard, target),
                })
            })
            .collect::<Result<_>>()?;
        Ok(MetricsReport { target, threshold, images })
    }

    /// Unweighted mean over images.
    pub fn mean(&self) -> Metrics {
        Metrics::mean(&self.images.iter().map(|r| r.metrics).collect::<Vec<_>>()).unwrap_or_default()
    }

    /// Fraction of images in each band, in [`Category::ALL`] order.
    pub fn category_fractions(&self) -> [(Category, f64); 4] {
        let n = self.images.len().max(1) as f64;
        Category::ALL.map(|c| {
            let k = self.images.iter().filter(|r| r.category == c).count();
            (c, k as f64 / n)
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.images {
            let m = r.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.id, self.target, m.accuracy, m.precision, m.recall, m.dice, m.jaccard, r.category
            );
        }
        out
    }

    /// Mean metrics as percentages to one decimal, followed by band fractions.
    pub fn summary_table(&self) -> String {
        let mean = self.mean().as_array();
        let widths: Vec<usize> = TABLE_COLUMNS.iter().map(|c| c.len()).collect();
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "Target");
        for (c, w) in TABLE_COLUMNS.iter().zip(&widths) {
            let _ = write!(out, " | {c:>w$}");
        }
        out.push('\n');
        let _ = write!(out, "{:<8}", self.target.as_str().to_uppercase());
        for (v, w) in mean.iter().zip(&widths) {
            let _ = write!(out, " | {:>w$.1}", v * 100.0);
        }
        let _ = write!(out, "\n\n{} images, threshold {}\n", self.images.len(), self.threshold);
        for (c, f) in self.category_fractions() {
            let _ = writeln!(out, "{:<7} {:>5.1}%", c.as_str(), f * 100.0);
        }
        out
    }
}

/// Report plus the raw probability maps it was computed from.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// `[1, H, W]` per image, aligned with `report.images`.
    pub probabilities: Vec<Tensor<f32>>,
}

impl Evaluation {
    /// Re-scores the stored probabilities at another threshold.
    pub fn rethreshold(&self, samples: &[&Sample], threshold: f64) -> Result<MetricsReport> {
        let preds = self
            .probabilities
            .iter()
            .map(|p| binarize(p, threshold))
            .collect::<Result<Vec<_>>>()?;
        let items: Vec<_> = samples
            .iter()
            .zip(&preds)
            .map(|(s, p)| (s.id.as_str(), p, &s.mask))
            .collect();
        MetricsReport::from_masks(self.report.target, threshold, &items)
    }
}

/// Segments every sample, binarizes at `threshold` and scores against its mask.
pub fn evaluate_set<S: Segmenter + ?Sized>(
    segmenter: &S,
    samples: &[&Sample],
    target: Target,
    threshold: f64,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no test samples to evaluate".into()));
    }
    let probabilities = samples
        .par_iter()
        .map(|s| segmenter.probabilities(&s.image))
        .collect::<Result<Vec<_>>>()?;
    let evaluation = Evaluation {
        report: MetricsReport { target, threshold, images: Vec::new() },
        probabilities,
    };
    let report = evaluation.rethreshold(samples, threshold)?;
    Ok(Evaluation { report, ..evaluation })
}
