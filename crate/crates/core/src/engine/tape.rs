//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends one node holding its forward value and whatever context
//! its gradient rule needs. Nodes only ever reference earlier nodes, so the
//! tape order is a topological order and `backward` is a single reverse sweep.

use rand::Rng;

use super::conv::{self, Conv2dOptions, Geometry};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Running statistics and constants of one batch-normalization layer.
/// The learnable scale and shift live on the tape as ordinary parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub epsilon: T,
}

impl<T: Real> BatchNormState<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::of(Self::DEFAULT_MOMENTUM),
            epsilon: T::of(Self::DEFAULT_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Exponential moving average towards the statistics of one batch.
    pub fn update(&mut self, stats: &BatchStats<T>) {
        let keep = self.momentum;
        let take = T::one() - keep;
        for (r, &m) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = keep * *r + take * m;
        }
        for (r, &v) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (keep * *r + take * v).max(T::min_positive_value());
        }
    }
}

/// Per-channel batch mean and unbiased variance observed in a training-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Which side of a kink one element took.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Side {
    Below,
    Inside,
    Above,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Choice {
    /// ReLU, clamp and sigmoid saturation, elementwise.
    Sides(Vec<Side>),
    /// Max-pool winners as flat input indices.
    Winners(Vec<u32>),
}

/// Every piecewise decision of one recorded pass (ReLU gates, clamp and
/// sigmoid saturation, max-pool winners) in tape order.
///
/// Two passes over the same graph with equal patterns lie on the same smooth
/// piece of the function. A tape built with [`Tape::replaying`] reuses a
/// pattern instead of deciding afresh, which extends that piece smoothly.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ActivationPattern {
    choices: Vec<Choice>,
}

impl ActivationPattern {
    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine { input: Var, scale: T },
    Ln(Var),
    Clamp { input: Var, lo: T, hi: T },
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    SumPerSample(Var),
    Concat { a: Var, b: Var },
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: Geometry },
    ConvTranspose2d { input: Var, weight: Var, bias: Option<Var>, geom: Geometry },
    MaxPool2d { input: Var, argmax: Vec<u32> },
    BatchNorm { input: Var, gamma: Var, beta: Var, normalized: Vec<T>, inv_std: Vec<T>, training: bool },
    Dropout { input: Var, scale: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Gradients of a scalar with respect to the tape's differentiable leaves.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    /// Remaining decisions to reuse, front first; `None` decides from values.
    replay: Option<std::collections::VecDeque<Choice>>,
    /// Choices made (or replayed) so far, in order.
    choices: Vec<Choice>,
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::dim(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )))
    }
}

fn zip_with<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("elementwise shape")
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), replay: None, choices: Vec::new() }
    }

    /// A tape whose piecewise ops reuse `pattern` in order instead of
    /// inspecting their inputs. Forward values then follow the smooth piece
    /// the pattern was recorded on; `backward` is refused.
    ///
    /// Panics if the recorded graph differs from the one that produced the
    /// pattern (an op kind or element count disagrees).
    pub fn replaying(pattern: ActivationPattern) -> Self {
        Tape { nodes: Vec::new(), replay: Some(pattern.choices.into()), choices: Vec::new() }
    }

    /// Next piecewise decision: replayed if a pattern is loaded, else `fresh()`.
    fn decide(&mut self, fresh: impl FnOnce(&[Node<T>]) -> Choice) -> Choice {
        let choice = match self.replay.as_mut() {
            Some(queue) => queue.pop_front().expect("replayed pattern has fewer piecewise ops than the graph"),
            None => fresh(&self.nodes),
        };
        self.choices.push(choice.clone());
        choice
    }

    /// Elementwise sides of `input` under `classify`, or replayed.
    fn decide_sides(&mut self, input: Var, classify: impl Fn(T) -> Side) -> Vec<Side> {
        let len = self.value(input).len();
        let fresh = |nodes: &[Node<T>]| Choice::Sides(nodes[input.0].value.data().iter().map(|&v| classify(v)).collect());
        match self.decide(fresh) {
            Choice::Sides(s) if s.len() == len => s,
            _ => panic!("replayed pattern does not match the graph"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Piecewise decisions taken so far.
    pub fn activation_pattern(&self) -> ActivationPattern {
        ActivationPattern { choices: self.choices.clone() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Differentiable leaves receive gradients in `backward`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "add")?;
        let out = zip_with(x, y, |p, q| p + q);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "sub")?;
        let out = zip_with(x, y, |p, q| p - q);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "mul")?;
        let out = zip_with(x, y, |p, q| p * q);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "div")?;
        if y.data().iter().any(|&q| q == T::zero()) {
            return Err(Error::param("div: zero divisor"));
        }
        let out = zip_with(x, y, |p, q| p / q);
        Ok(self.push(out, Op::Div(a, b), &[a, b]))
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&mut self, input: Var, scale: T, shift: T) -> Var {
        let out = self.value(input).map(|v| scale * v + shift);
        self.push(out, Op::Affine { input, scale }, &[input])
    }

    pub fn ln(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.data().iter().any(|&v| v <= T::zero()) {
            return Err(Error::param("ln: input must be strictly positive"));
        }
        let out = x.map(|v| v.ln());
        Ok(self.push(out, Op::Ln(input), &[input]))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, input: Var, lo: T, hi: T) -> Result<Var> {
        if lo > hi {
            return Err(Error::param("clamp: lower bound above upper bound"));
        }
        let sides = self.decide_sides(input, |v| if v < lo { Side::Below } else if v > hi { Side::Above } else { Side::Inside });
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .zip(&sides)
            .map(|(&v, side)| match side {
                Side::Below => lo,
                Side::Inside => v,
                Side::Above => hi,
            })
            .collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Clamp { input, lo, hi }, &[input]))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let sides = self.decide_sides(input, |v| if v > T::zero() { Side::Inside } else { Side::Below });
        let x = self.value(input);
        let data = x.data().iter().zip(&sides).map(|(&v, side)| if *side == Side::Inside { v } else { T::zero() }).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("elementwise shape");
        self.push(out, Op::Relu(input), &[input])
    }

    /// Logistic function. Outputs are kept inside the open unit interval even
    /// where the exact value rounds to 0 or 1.
    pub fn sigmoid(&mut self, input: Var) -> Var {
        let lo = T::epsilon();
        let hi = T::one() - T::epsilon();
        let logistic = |v: T| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        };
        let sides = self.decide_sides(input, |v| {
            let s = logistic(v);
            if s < lo { Side::Below } else if s > hi { Side::Above } else { Side::Inside }
        });
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .zip(&sides)
            .map(|(&v, side)| match side {
                Side::Below => lo,
                Side::Inside => logistic(v),
                Side::Above => hi,
            })
            .collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("elementwise shape");
        self.push(out, Op::Sigmoid(input), &[input])
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(input), &[input])
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let s: T = x.data().iter().copied().sum();
        let m = s / T::of(x.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(input), &[input])
    }

    /// Sums every axis but the first: `[B, ...] → [B]`.
    pub fn sum_per_sample(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.rank() < 2 {
            return Err(Error::dim("sum_per_sample needs at least two axes"));
        }
        let b = x.shape()[0];
        let inner = x.len() / b;
        let sums = x
            .data()
            .chunks(inner)
            .map(|c| c.iter().copied().sum())
            .collect();
        let out = Tensor::new(vec![b], sums)?;
        Ok(self.push(out, Op::SumPerSample(input), &[input]))
    }

    /// Concatenates two `[B, C, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [ba, ca, ha, wa] = self.value(a).dims4()?;
        let [bb, cb, hb, wb] = self.value(b).dims4()?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(Error::dim(format!(
                "concat_channels: non-channel dims differ ({ba},{ha},{wa}) vs ({bb},{hb},{wb})"
            )));
        }
        let plane = ha * wa;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(x.len() + y.len());
        for n in 0..ba {
            data.extend_from_slice(&x[n * ca * plane..(n + 1) * ca * plane]);
            data.extend_from_slice(&y[n * cb * plane..(n + 1) * cb * plane]);
        }
        let out = Tensor::new(vec![ba, ca + cb, ha, wa], data)?;
        Ok(self.push(out, Op::Concat { a, b }, &[a, b]))
    }

    /// 2-D cross-correlation with optional dilation. Weight is `[Cout, Cin, kh, kw]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        opts: Conv2dOptions,
    ) -> Result<Var> {
        let geom = conv::conv2d_geometry(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            &opts,
        )?;
        let out = conv::conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            &geom,
        );
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(out, Op::Conv2d { input, weight, bias, geom }, &inputs))
    }

    /// Transposed convolution (the adjoint of a strided `conv2d`, no padding).
    /// Weight is `[Cin, Cout, kh, kw]`; output extent is `(H−1)·stride + kh`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
    ) -> Result<Var> {
        let geom = conv::conv_transpose2d_geometry(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
        )?;
        let out = conv::conv_transpose2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            &geom,
        );
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(out, Op::ConvTranspose2d { input, weight, bias, geom }, &inputs))
    }

    /// 2×2 max pooling with stride 2. Ties go to the first element in
    /// row-major window order.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [b, c, h, w] = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(format!(
                "maxpool2d needs even spatial dims, got {h}×{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let winners = |nodes: &[Node<T>]| {
            let src = nodes[input.0].value.data();
            let mut argmax = Vec::with_capacity(b * c * oh * ow);
            for plane in 0..b * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let top = base + 2 * oy * w + 2 * ox;
                        let mut best = top;
                        for idx in [top + 1, top + w, top + w + 1] {
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                        argmax.push(best as u32);
                    }
                }
            }
            Choice::Winners(argmax)
        };
        let argmax = match self.decide(winners) {
            Choice::Winners(w) if w.len() == b * c * oh * ow => w,
            _ => panic!("replayed pattern does not match the graph"),
        };
        let src = self.value(input).data();
        let out = argmax.iter().map(|&i| src[i as usize]).collect();
        let out = Tensor::new(vec![b, c, oh, ow], out)?;
        Ok(self.push(out, Op::MaxPool2d { input, argmax }, &[input]))
    }

    /// Per-channel batch normalization of a `[B, C, H, W]` tensor.
    ///
    /// Training mode normalizes with batch statistics and returns them so the
    /// caller can fold them into `state`; inference mode uses `state` only.
    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &BatchNormState<T>,
        training: bool,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let x = self.value(input);
        let [b, c, h, w] = x.dims4()?;
        if self.value(gamma).shape() != [c]
            || self.value(beta).shape() != [c]
            || state.channels() != c
        {
            return Err(Error::dim(format!(
                "batch_norm2d: {c} channels but scale/shift/state sized {:?}/{:?}/{}",
                self.value(gamma).shape(),
                self.value(beta).shape(),
                state.channels()
            )));
        }
        let plane = h * w;
        let count = b * plane;
        if training && count == 1 {
            return Err(Error::param(
                "batch_norm2d: training mode needs more than one value per channel",
            ));
        }
        let src = x.data();
        let channel_values = |ch: usize| {
            (0..b).flat_map(move |n| {
                let start = (n * c + ch) * plane;
                src[start..start + plane].iter().copied()
            })
        };

        let (means, vars, stats) = if training {
            let nf = T::of(count as f64);
            let mut means = Vec::with_capacity(c);
            let mut vars = Vec::with_capacity(c);
            for ch in 0..c {
                let m = channel_values(ch).sum::<T>() / nf;
                let v = channel_values(ch).map(|v| (v - m) * (v - m)).sum::<T>() / nf;
                means.push(m);
                vars.push(v);
            }
            let unbiased = T::of(count as f64 / (count as f64 - 1.0));
            let stats = BatchStats {
                mean: means.clone(),
                var: vars.iter().map(|&v| v * unbiased).collect(),
            };
            (means, vars, Some(stats))
        } else {
            (state.running_mean.clone(), state.running_var.clone(), None)
        };

        let inv_std: Vec<T> = vars
            .iter()
            .map(|&v| T::one() / (v + state.epsilon).sqrt())
            .collect();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut normalized = vec![T::zero(); src.len()];
        let mut out = vec![T::zero(); src.len()];
        for n in 0..b {
            for ch in 0..c {
                let start = (n * c + ch) * plane;
                for i in start..start + plane {
                    let xh = (src[i] - means[ch]) * inv_std[ch];
                    normalized[i] = xh;
                    out[i] = g[ch] * xh + be[ch];
                }
            }
        }
        let out = Tensor::new(vec![b, c, h, w], out)?;
        let var = self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
                training,
            },
            &[input, gamma, beta],
        );
        Ok((var, stats))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and scales
    /// survivors by `1/(1−rate)`. Identity when not training.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(input);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let x = self.value(input);
        let scale: Vec<T> = (0..x.len())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect(),
        )?;
        Ok(self.push(out, Op::Dropout { input, scale }, &[input]))
    }

    /// Gradients of the scalar `loss` with respect to every differentiable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.replay.is_some() {
            return Err(Error::param("backward through a replayed tape is not supported"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::param(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut pending: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        pending[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(grad) = pending[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaves[idx] = Some(Tensor::new(node.value.shape().to_vec(), grad)?);
                continue;
            }
            for (var, contribution) in self.input_grads(node, &grad) {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut pending[var.0] {
                    Some(acc) => acc
                        .iter_mut()
                        .zip(contribution)
                        .for_each(|(a, c)| *a = *a + c),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn input_grads(&self, node: &Node<T>, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.iter().map(|&v| -v).collect()));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.iter().zip(val(*b)).map(|(&g, &y)| g * y).collect()));
                }
                if self.needs(*b) {
                    out.push((*b, g.iter().zip(val(*a)).map(|(&g, &x)| g * x).collect()));
                }
            }
            Op::Div(a, b) => {
                let (x, y) = (val(*a), val(*b));
                if self.needs(*a) {
                    out.push((*a, g.iter().zip(y).map(|(&g, &y)| g / y).collect()));
                }
                if self.needs(*b) {
                    let gb = g
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(&g, (&x, &y))| -g * x / (y * y))
                        .collect();
                    out.push((*b, gb));
                }
            }
            Op::Affine { input, scale } => {
                out.push((*input, g.iter().map(|&v| v * *scale).collect()));
            }
            Op::Ln(input) => {
                out.push((*input, g.iter().zip(val(*input)).map(|(&g, &x)| g / x).collect()));
            }
            Op::Clamp { input, lo, hi } => {
                let gi = g
                    .iter()
                    .zip(val(*input))
                    .map(|(&g, &x)| if x < *lo || x > *hi { T::zero() } else { g })
                    .collect();
                out.push((*input, gi));
            }
            Op::Relu(input) => {
                let gi = g
                    .iter()
                    .zip(val(*input))
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                out.push((*input, gi));
            }
            Op::Sigmoid(input) => {
                let gi = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&g, &s)| g * s * (T::one() - s))
                    .collect();
                out.push((*input, gi));
            }
            Op::Sum(input) => {
                out.push((*input, vec![g[0]; val(*input).len()]));
            }
            Op::Mean(input) => {
                let n = val(*input).len();
                out.push((*input, vec![g[0] / T::of(n as f64); n]));
            }
            Op::SumPerSample(input) => {
                let x = val(*input);
                let inner = x.len() / g.len();
                out.push((*input, g.iter().flat_map(|&v| std::iter::repeat_n(v, inner)).collect()));
            }
            Op::Concat { a, b } => {
                let [batch, ca, h, w] = self.nodes[a.0].value.dims4().expect("concat input");
                let cb = self.nodes[b.0].value.shape()[1];
                let plane = h * w;
                let (mut ga, mut gb) = (Vec::new(), Vec::new());
                for n in 0..batch {
                    let base = n * (ca + cb) * plane;
                    ga.extend_from_slice(&g[base..base + ca * plane]);
                    gb.extend_from_slice(&g[base + ca * plane..base + (ca + cb) * plane]);
                }
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::Conv2d { input, weight, bias, geom } => {
                let grads = conv::conv2d_backward(
                    &self.nodes[input.0].value,
                    &self.nodes[weight.0].value,
                    g,
                    geom,
                    [self.needs(*input), self.needs(*weight), bias.is_some_and(|b| self.needs(b))],
                );
                out.extend(grads.input.map(|d| (*input, d)));
                out.extend(grads.weight.map(|d| (*weight, d)));
                if let (Some(b), Some(d)) = (bias, grads.bias) {
                    out.push((*b, d));
                }
            }
            Op::ConvTranspose2d { input, weight, bias, geom } => {
                let grads = conv::conv_transpose2d_backward(
                    &self.nodes[input.0].value,
                    &self.nodes[weight.0].value,
                    g,
                    geom,
                    [self.needs(*input), self.needs(*weight), bias.is_some_and(|b| self.needs(b))],
                );
                out.extend(grads.input.map(|d| (*input, d)));
                out.extend(grads.weight.map(|d| (*weight, d)));
                if let (Some(b), Some(d)) = (bias, grads.bias) {
                    out.push((*b, d));
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let mut gi = vec![T::zero(); val(*input).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    gi[src as usize] = gi[src as usize] + gv;
                }
                out.push((*input, gi));
            }
            Op::BatchNorm { input, gamma, beta, normalized, inv_std, training } => {
                let [b, c, h, w] = self.nodes[input.0].value.dims4().expect("bn input");
                let plane = h * w;
                let gam = val(*gamma);
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for n in 0..b {
                    for ch in 0..c {
                        let start = (n * c + ch) * plane;
                        for i in start..start + plane {
                            dgamma[ch] = dgamma[ch] + g[i] * normalized[i];
                            dbeta[ch] = dbeta[ch] + g[i];
                        }
                    }
                }
                if self.needs(*input) {
                    let mut gi = vec![T::zero(); g.len()];
                    let count = T::of((b * plane) as f64);
                    for ch in 0..c {
                        // dL/dx̂ = g·γ; sums over the channel are γ·dβ and γ·dγ.
                        let scale = gam[ch] * inv_std[ch];
                        let mean_dxh = gam[ch] * dbeta[ch] / count;
                        let mean_dxh_xh = gam[ch] * dgamma[ch] / count;
                        for n in 0..b {
                            let start = (n * c + ch) * plane;
                            for i in start..start + plane {
                                gi[i] = if *training {
                                    inv_std[ch]
                                        * (g[i] * gam[ch] - mean_dxh - normalized[i] * mean_dxh_xh)
                                } else {
                                    g[i] * scale
                                };
                            }
                        }
                    }
                    out.push((*input, gi));
                }
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
            }
            Op::Dropout { input, scale } => {
                out.push((*input, g.iter().zip(scale).map(|(&g, &s)| g * s).collect()));
            }
        }
        out
    }
}
