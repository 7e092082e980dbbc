//! Renders the colour overlay and the four-tile panel for an imperfect
//! prediction of a phantom mask.
//!
//! cargo run --example render_overlays [OUT_DIR]

use std::path::PathBuf;

use blastoseg::data::{generate_phantoms, rotate_mask, Target};
use blastoseg::eval::metrics;
use blastoseg::viz::{annotation, overlay_filename, panel_filename, render_overlay, render_panel, save_png, OverlaySpec};

fn main() -> blastoseg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("blastoseg-examples/render_overlays"));
    std::fs::create_dir_all(&out).map_err(|e| blastoseg::Error::Io { path: out.clone(), source: e })?;

    let phantom = &generate_phantoms(1, 160, 5)?[0];
    let spec = OverlaySpec::default();
    for target in [Target::Icm, Target::Te] {
        let truth = phantom.mask(target);
        let pred = rotate_mask(truth, 15)?;
        let overlay = render_overlay(&pred, truth, &spec)?;
        let text = annotation(&metrics(&pred, truth)?);
        let panel = render_panel(&phantom.image, truth, &pred, &overlay, &text, &spec)?;
        save_png(&overlay, &out.join(overlay_filename(&phantom.id, target)))?;
        save_png(&panel, &out.join(panel_filename(&phantom.id, target)))?;
        println!("{target}: {}", text.replace('\n', " | "));
    }
    println!("wrote {}", out.display());
    Ok(())
}
