//! Oracles and fixtures shared by the integration tests and the acceptance
//! suite. Nothing here calls the code paths it is used to check.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::Rng;

use blastoseg::data::{phantom_dataset, preprocess, Sample, Target};
use blastoseg::engine::gradcheck::{
    check_tape_gradients, compare, Comparison, DEFAULT_ABS_FLOOR, DEFAULT_REL_TOL, DEFAULT_STEP,
};
use blastoseg::engine::{BatchNormState, Conv2dOptions, Tape, Tensor, Var};
use blastoseg::model::{random_batch, Model, ModelConfig};
use blastoseg::train::{fit, loss_bce_jaccard, FitReport, TrainConfig};
use blastoseg::{seeded_rng, Result, SeededRng};

/// `[B, C, H, W]` geometries every op is checked on; all spatial extents
/// are even so pooling and strided windows tile them.
pub const SHAPES: [[usize; 4]; 5] = [[1, 1, 4, 4], [2, 3, 4, 4], [1, 2, 6, 6], [3, 1, 8, 4], [2, 2, 6, 8]];

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut SeededRng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

pub fn binary(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_bool(0.4) as u8 as f64)
}

fn check<F>(inputs: &[Tensor<f64>], f: F) -> Result<Comparison>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_tape_gradients(inputs, DEFAULT_STEP, DEFAULT_REL_TOL, DEFAULT_ABS_FLOOR, f)
}

pub struct OpCase {
    pub name: &'static str,
    pub run: fn([usize; 4], &mut SeededRng) -> Result<Comparison>,
}

/// One case per differentiable tape op, plus the composite loss.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase { name: "add", run: |s, r| check(&[uniform(&s, -1.0, 1.0, r), uniform(&s, -1.0, 1.0, r)], |t, v| t.add(v[0], v[1])) },
        OpCase { name: "sub", run: |s, r| check(&[uniform(&s, -1.0, 1.0, r), uniform(&s, -1.0, 1.0, r)], |t, v| t.sub(v[0], v[1])) },
        OpCase { name: "mul", run: |s, r| check(&[uniform(&s, -1.0, 1.0, r), uniform(&s, -1.0, 1.0, r)], |t, v| t.mul(v[0], v[1])) },
        OpCase { name: "div", run: |s, r| check(&[uniform(&s, -1.0, 1.0, r), uniform(&s, 0.5, 2.0, r)], |t, v| t.div(v[0], v[1])) },
        OpCase { name: "affine", run: |s, r| check(&[uniform(&s, -1.0, 1.0, r)], |t, v| Ok(t.affine(v[0], 1.7, -0.3))) },
        OpCase { name: "ln", run: |s, r| check(&[uniform(&s, 0.5, 2.0, r)], |t, v| t.ln(v[0])) },
        OpCase { name: "clamp", run: |s, r| check(&[uniform(&s, -1.0, 1.0, r)], |t, v| t.clamp(v[0], -0.5, 0.5)) },
        OpCase { name: "relu", run: |s, r| check(&[uniform(&s, -1.0, 1.0, r)], |t, v| Ok(t.relu(v[0]))) },
        OpCase { name: "sigmoid", run: |s, r| check(&[uniform(&s, -3.0, 3.0, r)], |t, v| Ok(t.sigmoid(v[0]))) },
        OpCase { name: "sum", run: |s, r| check(&[uniform(&s, -1.0, 1.0, r)], |t, v| Ok(t.sum(v[0]))) },
        OpCase { name: "mean", run: |s, r| check(&[uniform(&s, -1.0, 1.0, r)], |t, v| Ok(t.mean(v[0]))) },
        OpCase { name: "sum_per_sample", run: |s, r| check(&[uniform(&s, -1.0, 1.0, r)], |t, v| t.sum_per_sample(v[0])) },
        OpCase {
            name: "concat_channels",
            run: |s, r| {
                let other = [s[0], s[1] + 1, s[2], s[3]];
                check(&[uniform(&s, -1.0, 1.0, r), uniform(&other, -1.0, 1.0, r)], |t, v| t.concat_channels(v[0], v[1]))
            },
        },
        OpCase { name: "conv2d_same", run: |s, r| conv_case(s, r, 3, Conv2dOptions::same()) },
        OpCase { name: "conv2d_dilated", run: |s, r| conv_case(s, r, 3, Conv2dOptions::dilated(2)) },
        OpCase { name: "conv2d_strided_valid", run: |s, r| conv_case(s, r, 2, Conv2dOptions::valid(2)) },
        OpCase {
            name: "conv_transpose2d",
            run: |s, r| {
                let inputs = [uniform(&s, -1.0, 1.0, r), uniform(&[s[1], 2, 2, 2], -1.0, 1.0, r), uniform(&[2], -1.0, 1.0, r)];
                check(&inputs, |t, v| t.conv_transpose2d(v[0], v[1], Some(v[2]), 2))
            },
        },
        OpCase { name: "maxpool2d", run: |s, r| check(&[uniform(&s, -1.0, 1.0, r)], |t, v| t.maxpool2d(v[0])) },
        OpCase {
            name: "batch_norm2d_training",
            run: |s, r| {
                let c = s[1];
                let inputs = [uniform(&s, -1.0, 1.0, r), uniform(&[c], 0.5, 1.5, r), uniform(&[c], -0.5, 0.5, r)];
                check(&inputs, move |t, v| {
                    let state = BatchNormState::<f64>::new(c);
                    Ok(t.batch_norm2d(v[0], v[1], v[2], &state, true)?.0)
                })
            },
        },
        OpCase {
            name: "batch_norm2d_inference",
            run: |s, r| {
                let c = s[1];
                let mut state = BatchNormState::<f64>::new(c);
                state.running_mean = (0..c).map(|_| r.gen_range(-0.5..0.5)).collect();
                state.running_var = (0..c).map(|_| r.gen_range(0.5..2.0)).collect();
                let inputs = [uniform(&s, -1.0, 1.0, r), uniform(&[c], 0.5, 1.5, r), uniform(&[c], -0.5, 0.5, r)];
                check(&inputs, move |t, v| Ok(t.batch_norm2d(v[0], v[1], v[2], &state, false)?.0))
            },
        },
        OpCase {
            name: "dropout",
            run: |s, r| {
                check(&[uniform(&s, -1.0, 1.0, r)], |t, v| {
                    let mut mask_rng = seeded_rng(3);
                    t.dropout(v[0], 0.3, true, &mut mask_rng)
                })
            },
        },
        OpCase {
            name: "bce_jaccard_loss",
            run: |s, r| {
                let s = [s[0], 1, s[2], s[3]];
                // below p ≈ 0.09 the central difference's own truncation error, h²/(3p²), exceeds the tolerance
                check(&[uniform(&s, 0.1, 0.9, r), binary(&s, r)], |t, v| loss_bce_jaccard(t, v[0], v[1]))
            },
        },
        OpCase {
            name: "bce_jaccard_loss_on_logits",
            run: |s, r| {
                let s = [s[0], 1, s[2], s[3]];
                check(&[uniform(&s, -3.0, 3.0, r), binary(&s, r)], |t, v| {
                    let p = t.sigmoid(v[0]);
                    loss_bce_jaccard(t, p, v[1])
                })
            },
        },
    ]
}

fn conv_case(s: [usize; 4], r: &mut SeededRng, k: usize, opts: Conv2dOptions) -> Result<Comparison> {
    let inputs = [uniform(&s, -1.0, 1.0, r), uniform(&[2, s[1], k, k], -1.0, 1.0, r), uniform(&[2], -1.0, 1.0, r)];
    check(&inputs, move |t, v| t.conv2d(v[0], v[1], Some(v[2]), opts))
}

/// Runs `case` on every shape in [`SHAPES`], merging the comparisons.
pub fn run_op_case(case: &OpCase, seed: u64) -> Result<(Comparison, usize)> {
    let mut rng = seeded_rng(seed);
    let mut merged = Comparison::default();
    let mut shapes_passed = 0;
    for s in SHAPES {
        let g = (case.run)(s, &mut rng)?;
        if g.passes(DEFAULT_REL_TOL) {
            shapes_passed += 1;
        }
        merged.merge(&g);
    }
    Ok((merged, shapes_passed))
}

pub struct NetworkCheck {
    pub comparison: Comparison,
    pub tensors: usize,
    pub tensors_checked: usize,
}

/// Finite-difference check of d(loss)/d(parameter) through the whole
/// default-width network in training mode at `size × size`.
///
/// `per_tensor` distinct coordinates of every parameter tensor are probed
/// (fewer if the tensor is smaller). Probes replay the base pass's ReLU,
/// clamp and pooling decisions, so the difference quotient follows the
/// same smooth piece as the analytic gradient.
pub fn network_gradient_check(size: usize, per_tensor: usize) -> Result<NetworkCheck> {
    let mut rng = seeded_rng(5);
    let config = ModelConfig { image_size: size, ..ModelConfig::default() };
    let model = Model::<f64>::build(config, &mut rng)?;
    let x = random_batch::<f64>([2, 1, size, size], &mut rng);
    let truth = Tensor::<f64>::from_fn(vec![2, 1, size, size], |_| rng.gen_bool(0.3) as u8 as f64);

    let record = |m: &Model<f64>, mut tape: Tape<f64>| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let input = tape.constant(x.clone());
        let target = tape.constant(truth.clone());
        let mut dropout_rng = seeded_rng(9);
        let pass = m.forward(&mut tape, input, true, &mut dropout_rng)?;
        let loss = loss_bce_jaccard(&mut tape, pass.output, target)?;
        Ok((tape, pass.params, loss))
    };
    let (tape, params, loss) = record(&model, Tape::new())?;
    let base = tape.activation_pattern();
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = params.iter().map(|&p| grads.take(p).expect("parameter gradient")).collect();

    let mut out = NetworkCheck { comparison: Comparison::default(), tensors: analytic.len(), tensors_checked: 0 };
    let mut probe = model.clone();
    for (pi, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let mut picked = Vec::new();
        let mut k = 0;
        while picked.len() < per_tensor.min(n) {
            let i = (k * 7919 + k * k * 104_729 + pi * 31) % n;
            if !picked.contains(&i) {
                picked.push(i);
            }
            k += 1;
        }
        let (mut an, mut nu) = (Vec::new(), Vec::new());
        for i in picked {
            let orig = probe.params()[pi].value.data()[i];
            let mut eval = |v: f64| -> Result<f64> {
                probe.params_mut()[pi].value.data_mut()[i] = v;
                let (t, _, l) = record(&probe, Tape::replaying(base.clone()))?;
                Ok(t.value(l).data()[0])
            };
            let plus = eval(orig + DEFAULT_STEP)?;
            let minus = eval(orig - DEFAULT_STEP)?;
            probe.params_mut()[pi].value.data_mut()[i] = orig;
            an.push(grad.data()[i]);
            nu.push((plus - minus) / (2.0 * DEFAULT_STEP));
        }
        if !an.is_empty() {
            out.tensors_checked += 1;
        }
        out.comparison.merge(&compare(&an, &nu, DEFAULT_REL_TOL, DEFAULT_ABS_FLOOR));
    }
    Ok(out)
}

/// Accuracy, precision, recall, Dice and Jaccard from set arithmetic on
/// the foreground index sets.
pub fn oracle_metrics(pred: &[bool], truth: &[bool]) -> [f64; 5] {
    let set = |m: &[bool]| m.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i).collect::<BTreeSet<_>>();
    let (p, g) = (set(pred), set(truth));
    let n = pred.len() as f64;
    let tp = p.intersection(&g).count() as f64;
    let union = p.union(&g).count() as f64;
    let (np, ng) = (p.len() as f64, g.len() as f64);
    let symmetric = p.symmetric_difference(&g).count() as f64;
    let ratio = |num: f64, den: f64, other_empty: bool| {
        if den > 0.0 {
            num / den
        } else if other_empty {
            1.0
        } else {
            0.0
        }
    };
    let precision = ratio(tp, np, g.is_empty());
    let recall = ratio(tp, ng, p.is_empty());
    let (dice, jaccard) = if union == 0.0 { (1.0, 1.0) } else { (2.0 * tp / (np + ng), tp / union) };
    [(n - symmetric) / n, precision, recall, dice, jaccard]
}

fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

fn residual_params(width: usize) -> usize {
    2 * (conv_params(width, width, 3) + 2 * width)
}

/// Learnable scalars of the residual-dilated U-Net, counted layer by layer
/// from the configuration alone.
pub fn closed_form_parameter_count(c: &ModelConfig) -> usize {
    let mut total = 0;
    let mut cin = c.input_channels;
    for &w in &c.encoder_kernels {
        total += conv_params(cin, w, 3) + 2 * w + residual_params(w);
        cin = w;
    }
    for _ in &c.dilation_rates {
        total += conv_params(cin, c.bottleneck_channels, 3);
        cin = c.bottleneck_channels;
    }
    for (j, &w) in c.decoder_kernels.iter().enumerate() {
        let skip = c.encoder_kernels[c.encoder_kernels.len() - 1 - j];
        let up = cin * w * 2 * 2 + w;
        total += up + 2 * w + conv_params(w + skip, w, 3) + 2 * w + residual_params(w);
        cin = w;
    }
    total + conv_params(cin, 1, 1)
}

pub struct Overfit {
    pub model: Model<f32>,
    pub samples: Vec<Sample>,
    pub report: FitReport,
    pub elapsed: Duration,
}

/// Default recipe (300 epochs at most, no augmentation) on 8 ICM phantoms at 64×64.
pub fn overfit_phantoms() -> Result<Overfit> {
    let start = Instant::now();
    let dataset = phantom_dataset(8, 64, 1, Target::Icm)?;
    let samples = dataset.samples.iter().map(|s| preprocess(s, 64)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let config = ModelConfig { image_size: 64, ..ModelConfig::default() };
    let mut model = Model::<f32>::build(config, &mut seeded_rng(1))?;
    let train = TrainConfig { max_epochs: 300, seed: 1, ..TrainConfig::default() };
    let report = fit(&mut model, &refs, &train, None)?;
    Ok(Overfit { model, samples, report, elapsed: start.elapsed() })
}

/// Interior of a square image: pixels inside the inscribed circle shrunk
/// by `margin`, which stay in frame under any rotation about the centre.
pub fn interior(size: usize, margin: f64) -> Vec<bool> {
    let c = (size as f64 - 1.0) / 2.0;
    let r = size as f64 / 2.0 - margin;
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - c, (i % size) as f64 - c);
            (x * x + y * y).sqrt() <= r
        })
        .collect()
}
