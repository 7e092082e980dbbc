use rand::seq::SliceRandom;
use rand::SeedableRng;

use super::{DataSet, Partition};
use crate::error::{Error, Result};
use crate::SeededRng;

/// Assigns `floor(train_frac · N)` shuffled originals to train and the rest
/// to test. Derived samples follow their origin.
pub fn split_and_shuffle(dataset: &DataSet, train_frac: f64, seed: u64) -> Result<DataSet> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::param(format!(
            "train fraction {train_frac} must lie strictly between 0 and 1"
        )));
    }
    let mut origins: Vec<String> = dataset.origins().into_iter().map(String::from).collect();
    if origins.len() < 2 {
        return Err(Error::param(format!(
            "splitting needs at least 2 original samples, got {}",
            origins.len()
        )));
    }
    // sort first so the permutation depends only on the id set and the seed
    origins.sort();
    origins.shuffle(&mut SeededRng::seed_from_u64(seed));
    let n_train = (train_frac * origins.len() as f64).floor() as usize;
    let assignment = origins
        .into_iter()
        .enumerate()
        .map(|(i, o)| {
            let p = if i < n_train { Partition::Train } else { Partition::Test };
            (o, p)
        })
        .collect();
    Ok(DataSet {
        samples: dataset.samples.clone(),
        assignment,
        seed,
    })
}

/// Permutation of `0..n` for one epoch, re-seeded from `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = SeededRng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Endless per-epoch shuffles of a training set of size `n`.
#[derive(Clone, Debug)]
pub struct EpochOrders {
    n: usize,
    seed: u64,
    epoch: usize,
}

impl EpochOrders {
    pub fn new(n: usize, seed: u64) -> Self {
        EpochOrders { n, seed, epoch: 0 }
    }
}

impl Iterator for EpochOrders {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let order = epoch_order(self.n, self.seed, self.epoch);
        self.epoch += 1;
        Some(order)
    }
}
