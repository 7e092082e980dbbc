use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;

use super::{adam_step, loss_bce_jaccard, AdamState, Decision, EarlyStopping, ReduceLrOnPlateau, TrainConfig};
use crate::data::{EpochOrders, Sample};
use crate::engine::{Real, Tape, Tensor};
use crate::error::{Error, Result};
use crate::eval::evaluate_set;
use crate::model::Model;
use crate::SeededRng;

pub const LOG_HEADER: &str = "epoch,lr,train_loss,val_dice,val_jaccard";
// keeps dropout draws apart from the per-epoch shuffle streams
const DROPOUT_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Rate used during this epoch.
    pub lr: f64,
    /// Mean minibatch loss over the epoch.
    pub train_loss: f64,
    pub val_dice: Option<f64>,
    pub val_jaccard: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitReport {
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights the model holds after `fit` returns.
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stopped_early: bool,
}

impl FitReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch,
                r.lr,
                r.train_loss,
                opt(r.val_dice),
                opt(r.val_jaccard)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Consecutive index ranges of at most `batch_size`; the last may be partial.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<Range<usize>> {
    (0..n).step_by(batch_size.max(1)).map(|s| s..(s + batch_size).min(n)).collect()
}

fn stack<T: Real>(samples: &[&Sample], indices: &[usize], pick: fn(&Sample) -> &Tensor<f32>) -> Result<Tensor<T>> {
    let items: Vec<&Tensor<f32>> = indices.iter().map(|&i| pick(samples[i])).collect();
    Ok(Tensor::stack(&items)?.cast())
}

/// Trains `model` on `train` and leaves it holding the weights of the epoch
/// with the lowest training loss.
///
/// On a non-finite loss or gradient the best weights so far are restored
/// before the error is returned.
pub fn fit<T: Real>(
    model: &mut Model<T>,
    train: &[&Sample],
    config: &TrainConfig,
    validation: Option<&[&Sample]>,
) -> Result<FitReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("training split has no samples".into()));
    }
    let mut adam = AdamState::new(model.params());
    let mut plateau = ReduceLrOnPlateau::new(config.lr0, config.lr_factor, config.lr_patience);
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut orders = EpochOrders::new(train.len(), config.seed);
    let mut dropout_rng = SeededRng::seed_from_u64(config.seed);
    dropout_rng.set_stream(DROPOUT_STREAM);

    let mut report = FitReport::default();
    let mut best: Option<Model<T>> = None;
    let mut lr = plateau.lr();

    for epoch in 1..=config.max_epochs {
        let order = orders.next().expect("endless iterator");
        let outcome = run_epoch(model, train, &order, config.batch_size, &mut adam, lr, &mut dropout_rng);
        let train_loss = match outcome {
            Ok(loss) => loss,
            Err(e) => {
                if let Some(b) = best.take() {
                    *model = b;
                }
                return Err(match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}: {msg}")),
                    other => other,
                });
            }
        };

        let (val_dice, val_jaccard) = match validation {
            Some(v) if !v.is_empty() => {
                let mean = evaluate_set(&*model, v, crate::data::Target::Icm, config.threshold)?.report.mean();
                (Some(mean.dice), Some(mean.jaccard))
            }
            _ => (None, None),
        };
        report.records.push(EpochRecord { epoch, lr, train_loss, val_dice, val_jaccard });
        log::info!("epoch {epoch:>3}  lr {lr:.3e}  loss {train_loss:.6}");

        let improved_before = stopper.best();
        let decision = stopper.step(train_loss);
        if stopper.best() != improved_before {
            best = Some(model.clone());
            report.best_epoch = epoch;
            report.best_loss = train_loss;
        }
        lr = plateau.step(train_loss);
        if decision == Decision::Stop {
            report.stopped_early = true;
            log::info!("early stop after epoch {epoch}; best epoch {}", report.best_epoch);
            break;
        }
    }
    if let Some(b) = best {
        *model = b;
    }
    Ok(report)
}

fn run_epoch<T: Real>(
    model: &mut Model<T>,
    train: &[&Sample],
    order: &[usize],
    batch_size: usize,
    adam: &mut AdamState<T>,
    lr: f64,
    rng: &mut SeededRng,
) -> Result<f64> {
    let batches = batch_ranges(order.len(), batch_size);
    let mut total = 0.0;
    for (b, range) in batches.iter().enumerate() {
        let indices = &order[range.clone()];
        let images = stack::<T>(train, indices, |s| &s.image)?;
        let masks = stack::<T>(train, indices, |s| &s.mask)?;

        let mut tape = Tape::new();
        let input = tape.constant(images);
        let target = tape.constant(masks);
        let pass = model.forward(&mut tape, input, true, rng)?;
        let loss_var = loss_bce_jaccard(&mut tape, pass.output, target)?;
        let loss = tape.value(loss_var).data()[0].as_f64();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss of minibatch {b} is {loss}")));
        }
        let mut grads = tape.backward(loss_var)?;
        let grads: Vec<Tensor<T>> = pass
            .params
            .iter()
            .zip(model.params())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec())))
            .collect();
        adam_step(model.params_mut(), &grads, adam, lr)?;
        model.update_running_stats(&pass.batch_stats);
        total += loss;
    }
    Ok(total / batches.len() as f64)
}
