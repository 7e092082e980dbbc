//! Central finite-difference gradient checking.
//!
//! The numeric side works purely through repeated forward evaluations of a
//! closure, so it is independent of the tape's gradient rules.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_REL_TOL: f64 = 1e-4;
pub const DEFAULT_ABS_FLOOR: f64 = 1e-6;

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for each requested flat index of `inputs[which]`.
pub fn central_difference<F>(
    inputs: &[Tensor<f64>],
    which: usize,
    indices: &[usize],
    step: f64,
    mut f: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64>,
{
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = probe[which].data()[i];
        probe[which].data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe[which].data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe[which].data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Relative error with an absolute floor: differences below
/// `abs_floor` count as agreement whatever the magnitudes.
pub fn relative_error(analytic: f64, numeric: f64, rel_tol: f64, abs_floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(abs_floor / rel_tol);
    (analytic - numeric).abs() / scale
}

#[derive(Clone, Debug, Default)]
pub struct Comparison {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(position in the compared slice, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, f64, f64)>,
}

impl Comparison {
    /// At least one entry compared and all within `rel_tol`.
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < rel_tol
    }

    pub fn merge(&mut self, other: &Comparison) {
        self.checked += other.checked;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

pub fn compare(analytic: &[f64], numeric: &[f64], rel_tol: f64, abs_floor: f64) -> Comparison {
    let mut cmp = Comparison {
        checked: analytic.len(),
        ..Comparison::default()
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = relative_error(a, n, rel_tol, abs_floor);
        if cmp.worst.is_none() || e > cmp.max_rel_error {
            cmp.max_rel_error = e;
            cmp.worst = Some((i, a, n));
        }
    }
    cmp
}

/// Fixed non-uniform weights contracting a tensor output to a scalar, so
/// every output position carries a distinct upstream gradient.
fn projection(len: usize) -> Tensor<f64> {
    Tensor::from_fn(vec![len], |i| 0.5 + ((i as f64 + 1.0) * 0.754877666).fract())
}

/// Compares tape gradients of `f` with central differences at every
/// coordinate of every input.
///
/// `f` records an expression over one leaf per input; a non-scalar result
/// is contracted with fixed weights. Probes are evaluated on tapes that
/// replay the unperturbed pass's [`ActivationPattern`](super::ActivationPattern),
/// so a probe that would cross a ReLU, clamp or pooling kink stays on the
/// smooth piece the analytic gradient belongs to.
pub fn check_tape_gradients<F>(
    inputs: &[Tensor<f64>],
    step: f64,
    rel_tol: f64,
    abs_floor: f64,
    f: F,
) -> Result<Comparison>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let record = |mut tape: Tape<f64>, values: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let leaves: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(&mut tape, &leaves)?;
        let shape = tape.value(out).shape().to_vec();
        let len: usize = shape.iter().product();
        let loss = if len == 1 {
            out
        } else {
            let w = projection(len).reshape(shape)?;
            let w = tape.constant(w);
            let weighted = tape.mul(out, w)?;
            tape.sum(weighted)
        };
        Ok((tape, leaves, loss))
    };

    let (tape, leaves, loss) = record(Tape::new(), inputs)?;
    let base = tape.activation_pattern();
    let mut grads = tape.backward(loss)?;
    let scalar = |values: &[Tensor<f64>]| -> Result<f64> {
        let (tape, _, loss) = record(Tape::replaying(base.clone()), values)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut result = Comparison::default();
    let mut probe = inputs.to_vec();
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .take(*leaf)
            .ok_or_else(|| Error::param(format!("input {k} received no gradient")))?;
        let indices: Vec<usize> = (0..probe[k].len()).collect();
        let numeric = central_difference(&probe, k, &indices, step, |t| scalar(t))?;
        result.merge(&compare(analytic.data(), &numeric, rel_tol, abs_floor));
        probe[k] = inputs[k].clone();
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difference_of_a_cubic_is_second_order_accurate() {
        let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let num = central_difference(&[x], 0, &[0, 1, 2], 1e-3, |t| {
            Ok(t[0].data().iter().map(|v| v * v * v).sum())
        })
        .unwrap();
        for (n, v) in num.iter().zip([0.5f64, -1.0, 2.0]) {
            // exact error of the central difference on x³ is h²
            assert!((n - 3.0 * v * v - 1e-6).abs() < 1e-9);
        }
    }

    #[test]
    fn floor_absorbs_tiny_absolute_differences() {
        assert!(relative_error(1e-9, 5e-7, 1e-4, 1e-6) < 1e-4);
        assert!(relative_error(1.0, 1.001, 1e-4, 1e-6) > 1e-4);
    }
}
