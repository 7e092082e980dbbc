//! Scores hand-made predictions against a phantom mask and bins them into
//! quality categories.
//!
//! cargo run --example segmentation_metrics

use blastoseg::data::{generate_phantoms, rotate_mask, Target};
use blastoseg::engine::Tensor;
use blastoseg::eval::{band_edges, categorize, confusion, metrics};

fn main() -> blastoseg::Result<()> {
    let phantom = &generate_phantoms(1, 96, 3)?[0];
    for target in [Target::Icm, Target::Te] {
        let truth = phantom.mask(target);
        let shifted = Tensor::from_fn(truth.shape().to_vec(), |i| {
            let w = truth.shape()[2];
            if i % w >= 2 { truth.data()[i - 2] } else { 0.0 }
        });
        let candidates = [
            ("exact", truth.clone()),
            ("shifted 2 px", shifted),
            ("rotated 20°", rotate_mask(truth, 20)?),
            ("empty", Tensor::zeros(truth.shape().to_vec())),
        ];
        println!("{target} (band edges {:?})", band_edges(target));
        for (name, pred) in &candidates {
            let c = confusion(pred, truth)?;
            let m = metrics(pred, truth)?;
            println!(
                "  {name:<13} tp {:>5} fp {:>5} fn {:>5}  acc {:.3} prec {:.3} rec {:.3} dice {:.3} jac {:.3} -> {}",
                c.tp,
                c.fp,
                c.fn_,
                m.accuracy,
                m.precision,
                m.recall,
                m.dice,
                m.jaccard,
                categorize(m.jaccard, target),
            );
        }
    }
    Ok(())
}
