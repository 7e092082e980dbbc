//! Rotates one phantom in 10° steps and reports how well masks keep their
//! area and how closely rotating back recovers the image.
//!
//! cargo run --example rotation_augmentation [OUT_DIR]

use std::path::PathBuf;

use blastoseg::data::{augment_rotations, generate_phantoms, phantom_dataset, rotate_image, write_gray8, write_mask, Target};

fn main() -> blastoseg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("blastoseg-examples/rotation_augmentation"));
    std::fs::create_dir_all(&out).map_err(|e| blastoseg::Error::Io { path: out.clone(), source: e })?;

    let set = phantom_dataset(1, 128, 7, Target::Te)?;
    let original = &set.samples[0];
    let rotations = augment_rotations(original, 10)?;
    println!("{} rotations of {}", rotations.len(), original.id);
    for r in rotations.iter().step_by(9) {
        let drift = (r.foreground() as f64 - original.foreground() as f64) / original.foreground() as f64;
        println!("  {:<24} foreground {:>5} ({:+.2}%)", r.id, r.foreground(), 100.0 * drift);
        write_gray8(&r.image, &out.join(format!("{}.png", r.id)))?;
        write_mask(&r.mask, &out.join(format!("{}_te.png", r.id)))?;
    }

    // rotating forward and back only loses what left the frame
    let image = &generate_phantoms(1, 128, 7)?[0].image;
    for degrees in [10, 45, 90, 135] {
        let back = rotate_image(&rotate_image(image, degrees)?, -degrees)?;
        let mae: f64 = back.data().iter().zip(image.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>()
            / image.len() as f64;
        println!("  rotate {degrees:>3}° and back: whole-image MAE {mae:.4}");
    }
    println!("wrote {}", out.display());
    Ok(())
}
