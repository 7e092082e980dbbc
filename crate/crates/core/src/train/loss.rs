use crate::engine::{Real, Tape, Var};
use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;
pub const SOFT_JACCARD_EPS: f64 = 1e-7;

/// `BCE(p, g) + 1 − mean_b softJaccard_b(p, g)` on probabilities `pred` and
/// binary `target`, both `[B, ...]`.
///
/// Probabilities are clamped to `[1e-7, 1 − 1e-7]` before both terms. BCE is
/// averaged over every pixel of the batch, the Jaccard term per sample.
pub fn loss_bce_jaccard<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    if tape.value(pred).shape() != tape.value(target).shape() {
        return Err(Error::dim(format!(
            "loss: prediction {:?} and target {:?} differ",
            tape.value(pred).shape(),
            tape.value(target).shape()
        )));
    }
    let one = T::one();
    let p = tape.clamp(pred, T::of(PROB_CLAMP), one - T::of(PROB_CLAMP))?;

    let log_p = tape.ln(p)?;
    let q = tape.affine(p, -one, one);
    let log_q = tape.ln(q)?;
    let not_target = tape.affine(target, -one, one);
    let pos = tape.mul(target, log_p)?;
    let neg = tape.mul(not_target, log_q)?;
    let ll = tape.add(pos, neg)?;
    let mean_ll = tape.mean(ll);
    let bce = tape.affine(mean_ll, -one, T::zero());

    let overlap = tape.mul(p, target)?;
    let inter = tape.sum_per_sample(overlap)?;
    let sum_p = tape.sum_per_sample(p)?;
    let sum_g = tape.sum_per_sample(target)?;
    let total = tape.add(sum_p, sum_g)?;
    let union = tape.sub(total, inter)?;
    let eps = T::of(SOFT_JACCARD_EPS);
    let num = tape.affine(inter, one, eps);
    let den = tape.affine(union, one, eps);
    let jaccard = tape.div(num, den)?;
    let mean_j = tape.mean(jaccard);
    let jaccard_loss = tape.affine(mean_j, -one, one);

    tape.add(bce, jaccard_loss)
}
