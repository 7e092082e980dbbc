//! Runs the `predict` command on phantom images with an untrained model
//! and shows how the stored 16-bit probability maps and masks agree.
//!
//! cargo run --example predict_probability_maps [OUT_DIR]

use std::path::PathBuf;

use blastoseg::cli::{mask_filename, predict, probability_filename, read_probability_png};
use blastoseg::data::{generate_phantoms, read_mask, write_phantoms};
use blastoseg::eval::binarize;
use blastoseg::model::{Model, ModelConfig, TrainingMeta};
use blastoseg::seeded_rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("blastoseg-examples/predict_probability_maps"));
    let data = out.join("phantoms");
    write_phantoms(&generate_phantoms(3, 80, 9)?, &data)?;

    // inputs are 80×80; the model works at 64×64 and maps are resized back
    let config = ModelConfig::scaled(2, 4, 64);
    let ckpt = out.join("model.ckpt");
    Model::<f32>::build(config.clone(), &mut seeded_rng(2))?.save(&ckpt, TrainingMeta::default())?;
    let preds = out.join("predictions");
    let n = predict(&ckpt, &data.join("images"), 0.5, &preds, Some(&config))?;
    println!("predicted {n} images");

    for i in 0..n {
        let stem = format!("phantom_{i:04}");
        let prob = read_probability_png(&preds.join(probability_filename(&stem)))?;
        let mask = read_mask(&preds.join(mask_filename(&stem)))?;
        let (lo, hi) = prob.data().iter().fold((1.0f32, 0.0f32), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        let agree = binarize(&prob, 0.5)?.data() == mask.data();
        println!("  {stem}: {:?} probabilities in [{lo:.3}, {hi:.3}], mask matches map: {agree}", prob.shape());
    }
    println!("wrote {}", preds.display());
    Ok(())
}
