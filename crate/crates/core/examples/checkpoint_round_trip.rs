//! Saves a model, reloads it, and shows that a single flipped byte is
//! caught by the checksum.
//!
//! cargo run --example checkpoint_round_trip [OUT_DIR]

use std::path::PathBuf;

use blastoseg::model::{random_batch, Model, ModelConfig, TrainingMeta};
use blastoseg::seeded_rng;

fn main() -> blastoseg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("blastoseg-examples/checkpoint_round_trip"));
    std::fs::create_dir_all(&out).map_err(|e| blastoseg::Error::Io { path: out.clone(), source: e })?;
    let io = |path: &PathBuf| {
        let path = path.clone();
        move |source| blastoseg::Error::Io { path, source }
    };

    let config = ModelConfig::scaled(3, 8, 64);
    let model = Model::<f32>::build(config.clone(), &mut seeded_rng(4))?;
    let path = out.join("model.ckpt");
    model.save(&path, TrainingMeta { epoch: 1, ..TrainingMeta::default() })?;
    let bytes = std::fs::read(&path).map_err(io(&path))?;
    println!("{} parameters in {} tensors, {} bytes on disk", model.parameter_count(), model.params().len(), bytes.len());

    let (loaded, meta) = Model::<f32>::load(&path, Some(&config))?;
    let x = random_batch::<f32>([1, 1, 64, 64], &mut seeded_rng(0));
    let same = model.predict(&x)?.data() == loaded.predict(&x)?.data();
    println!("reloaded epoch {}: predictions identical: {same}", meta.epoch);

    let mut corrupt = bytes;
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0x10;
    let bad = out.join("corrupt.ckpt");
    std::fs::write(&bad, corrupt).map_err(io(&bad))?;
    match Model::<f32>::load(&bad, None) {
        Ok(_) => println!("corrupted checkpoint loaded (unexpected)"),
        Err(e) => println!("corrupted checkpoint rejected: {e}"),
    }
    Ok(())
}
