//! Trains a narrow network on synthetic phantoms, then scores it on a
//! held-out split. Takes under a minute on one core.
//!
//! cargo run --release --example train_on_phantoms [OUT_DIR]

use std::path::PathBuf;

use blastoseg::data::{phantom_dataset, preprocess, split_and_shuffle, Sample, Target};
use blastoseg::eval::evaluate_set;
use blastoseg::model::{Model, ModelConfig, TrainingMeta};
use blastoseg::seeded_rng;
use blastoseg::train::{fit, TrainConfig};

fn main() -> blastoseg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("blastoseg-examples/train_on_phantoms"));
    std::fs::create_dir_all(&out).map_err(|e| blastoseg::Error::Io { path: out.clone(), source: e })?;

    let size = 48;
    let raw = phantom_dataset(12, size, 11, Target::Icm)?;
    let samples = raw.samples.iter().map(|s| preprocess(s, size)).collect::<blastoseg::Result<Vec<_>>>()?;
    let split = split_and_shuffle(&blastoseg::data::DataSet::new(samples), 0.75, 11)?;
    let (train, test): (Vec<&Sample>, Vec<&Sample>) = (split.train(), split.test());

    let mut model = Model::<f32>::build(ModelConfig::scaled(3, 8, size), &mut seeded_rng(11))?;
    let config = TrainConfig { batch_size: 4, max_epochs: 60, lr0: 3e-3, seed: 11, ..TrainConfig::default() };
    let report = fit(&mut model, &train, &config, Some(&test))?;
    for r in report.records.iter().step_by(10) {
        println!("epoch {:>3}  lr {:.2e}  loss {:.4}  val dice {:.3}", r.epoch, r.lr, r.train_loss, r.val_dice.unwrap_or(f64::NAN));
    }
    println!("best epoch {} (loss {:.4}), stopped early: {}", report.best_epoch, report.best_loss, report.stopped_early);

    let eval = evaluate_set(&model, &test, Target::Icm, 0.5)?;
    print!("{}", eval.report.summary_table());
    report.write_csv(&out.join("train_log.csv"))?;
    let meta = TrainingMeta { epoch: report.best_epoch, best_loss: Some(report.best_loss), seed: Some(11), ..TrainingMeta::default() };
    model.save(out.join("model.ckpt"), meta)?;
    println!("wrote {}", out.display());
    Ok(())
}
