//! Writes a small synthetic dataset in the on-disk layout `load_dataset`
//! reads: `images/`, `masks_icm/` and `masks_te/`.
//!
//! cargo run --example synthesize_phantoms [OUT_DIR]

use std::path::PathBuf;

use blastoseg::data::{generate_phantoms, load_dataset, write_phantoms, Target};

fn main() -> blastoseg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("blastoseg-examples/synthesize_phantoms"));
    let phantoms = generate_phantoms(6, 128, 42)?;
    write_phantoms(&phantoms, &out)?;

    for target in [Target::Icm, Target::Te] {
        let set = load_dataset(&out, target)?;
        let cover: Vec<String> = set
            .samples
            .iter()
            .map(|s| format!("{:.1}%", 100.0 * s.foreground() as f64 / (s.height() * s.width()) as f64))
            .collect();
        println!("{target}: {} images, foreground {}", set.samples.len(), cover.join(" "));
    }
    println!("wrote {}", out.display());
    Ok(())
}
