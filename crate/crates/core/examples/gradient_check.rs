//! Checks reverse-mode gradients of a small residual block plus the
//! training loss against central differences.
//!
//! cargo run --example gradient_check

use blastoseg::engine::gradcheck::{check_tape_gradients, DEFAULT_ABS_FLOOR, DEFAULT_REL_TOL, DEFAULT_STEP};
use blastoseg::engine::{Conv2dOptions, Tensor};
use blastoseg::seeded_rng;
use blastoseg::train::loss_bce_jaccard;
use rand::Rng;

fn main() -> blastoseg::Result<()> {
    let mut rng = seeded_rng(1);
    let mut uniform = |shape: &[usize], lo: f64, hi: f64| Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi));
    let x = uniform(&[2, 3, 8, 8], -1.0, 1.0);
    let w1 = uniform(&[3, 3, 3, 3], -0.5, 0.5);
    let w2 = uniform(&[3, 3, 3, 3], -0.5, 0.5);
    let head = uniform(&[1, 3, 1, 1], -1.0, 1.0);
    let truth = uniform(&[2, 1, 4, 4], 0.0, 1.0).map(|v| (v > 0.6) as u8 as f64);

    let check = check_tape_gradients(&[x, w1, w2, head], DEFAULT_STEP, DEFAULT_REL_TOL, DEFAULT_ABS_FLOOR, |t, v| {
        let h = t.conv2d(v[0], v[1], None, Conv2dOptions::dilated(2))?;
        let h = t.relu(h);
        let h = t.conv2d(h, v[2], None, Conv2dOptions::same())?;
        let h = t.add(h, v[0])?;
        let h = t.maxpool2d(h)?;
        let logits = t.conv2d(h, v[3], None, Conv2dOptions::same())?;
        let p = t.sigmoid(logits);
        let target = t.constant(truth.clone());
        loss_bce_jaccard(t, p, target)
    })?;
    println!(
        "{} coordinates compared, max relative error {:.2e} (tolerance {DEFAULT_REL_TOL:e}): {}",
        check.checked,
        check.max_rel_error,
        if check.passes(DEFAULT_REL_TOL) { "pass" } else { "FAIL" }
    );
    Ok(())
}
