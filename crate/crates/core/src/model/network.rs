use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::engine::{BatchNormState, BatchStats, Conv2dOptions, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::SeededRng;

/// A learnable tensor with a stable, unique name.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Running statistics of one batch-norm layer, keyed by layer prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct NormBuffers<T> {
    pub prefix: String,
    pub state: BatchNormState<T>,
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    weight: usize,
    bias: usize,
    opts: Conv2dOptions,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: usize,
    beta: usize,
    buffers: usize,
}

/// conv → batch norm → ReLU
#[derive(Clone, Copy, Debug)]
struct ConvBlock {
    conv: Conv,
    norm: Norm,
}

/// `relu(shortcut(x) + bn(conv(relu(bn(conv(x))))))`
#[derive(Clone, Copy, Debug)]
struct Residual {
    first: ConvBlock,
    second: Conv,
    second_norm: Norm,
    projection: Option<Conv>,
}

#[derive(Clone, Copy, Debug)]
struct EncoderUnit {
    conv: ConvBlock,
    residual: Residual,
}

#[derive(Clone, Copy, Debug)]
struct DecoderUnit {
    up: Conv,
    up_norm: Norm,
    conv: ConvBlock,
    residual: Residual,
}

/// Result of one forward pass recorded on a tape.
pub struct ForwardPass<T> {
    /// Probability map `[B, 1, H, W]`.
    pub output: Var,
    /// Tape handles of the parameters, aligned with [`Model::params`].
    pub params: Vec<Var>,
    /// Batch statistics per norm layer (training mode only), aligned with
    /// [`Model::norm_buffers`].
    pub batch_stats: Vec<Option<BatchStats<T>>>,
    /// Named intermediate activations, in evaluation order.
    pub trace: Vec<(String, Var)>,
}

/// Residual-dilated U-Net: a `depth`-level encoder/decoder joined by skip
/// connections, with a stack of dilated convolutions as the bottleneck and a
/// 1×1 sigmoid head producing one foreground probability per pixel.
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    params: Vec<Parameter<T>>,
    norms: Vec<NormBuffers<T>>,
    encoders: Vec<EncoderUnit>,
    bottleneck: Vec<Conv>,
    decoders: Vec<DecoderUnit>,
    head: Conv,
}

struct Builder<'r, T> {
    rng: &'r mut SeededRng,
    params: Vec<Parameter<T>>,
    norms: Vec<NormBuffers<T>>,
}

impl<T: Real> Builder<'_, T> {
    fn tensor(&mut self, name: String, value: Tensor<T>) -> usize {
        self.params.push(Parameter { name, value });
        self.params.len() - 1
    }

    fn he_normal(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        Tensor::from_fn(shape, |_| T::of(normal.sample(self.rng)))
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, opts: Conv2dOptions) -> Conv {
        let w = self.he_normal(vec![cout, cin, k, k], cin * k * k);
        let weight = self.tensor(format!("{name}.weight"), w);
        let bias = self.tensor(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        Conv { weight, bias, opts }
    }

    fn up_conv(&mut self, name: &str, cin: usize, cout: usize) -> Conv {
        let w = self.he_normal(vec![cin, cout, 2, 2], cin);
        let weight = self.tensor(format!("{name}.weight"), w);
        let bias = self.tensor(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        Conv {
            weight,
            bias,
            opts: Conv2dOptions::valid(2),
        }
    }

    fn norm(&mut self, name: &str, channels: usize) -> Norm {
        let gamma = self.tensor(format!("{name}.gamma"), Tensor::ones(vec![channels]));
        let beta = self.tensor(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        self.norms.push(NormBuffers {
            prefix: name.to_string(),
            state: BatchNormState::new(channels),
        });
        Norm {
            gamma,
            beta,
            buffers: self.norms.len() - 1,
        }
    }

    fn conv_block(&mut self, name: &str, cin: usize, cout: usize) -> ConvBlock {
        ConvBlock {
            conv: self.conv(name, cin, cout, 3, Conv2dOptions::same()),
            norm: self.norm(&format!("{name}.bn"), cout),
        }
    }

    fn residual(&mut self, name: &str, cin: usize, cout: usize) -> Residual {
        let first = self.conv_block(&format!("{name}.conv1"), cin, cout);
        let second = self.conv(&format!("{name}.conv2"), cout, cout, 3, Conv2dOptions::same());
        let second_norm = self.norm(&format!("{name}.conv2.bn"), cout);
        let projection = (cin != cout)
            .then(|| self.conv(&format!("{name}.proj"), cin, cout, 1, Conv2dOptions::same()));
        Residual {
            first,
            second,
            second_norm,
            projection,
        }
    }
}

struct Pass<'t, 'm, T> {
    tape: &'t mut Tape<T>,
    model: &'m Model<T>,
    params: Vec<Var>,
    batch_stats: Vec<Option<BatchStats<T>>>,
    trace: Vec<(String, Var)>,
    training: bool,
}

impl<T: Real> Pass<'_, '_, T> {
    fn conv(&mut self, c: &Conv, x: Var) -> Result<Var> {
        self.tape
            .conv2d(x, self.params[c.weight], Some(self.params[c.bias]), c.opts)
    }

    fn up_conv(&mut self, c: &Conv, x: Var) -> Result<Var> {
        self.tape
            .conv_transpose2d(x, self.params[c.weight], Some(self.params[c.bias]), 2)
    }

    fn norm(&mut self, n: &Norm, x: Var) -> Result<Var> {
        let state = &self.model.norms[n.buffers].state;
        let (y, stats) = self.tape.batch_norm2d(
            x,
            self.params[n.gamma],
            self.params[n.beta],
            state,
            self.training,
        )?;
        self.batch_stats[n.buffers] = stats;
        Ok(y)
    }

    fn conv_block(&mut self, b: &ConvBlock, x: Var) -> Result<Var> {
        let y = self.conv(&b.conv, x)?;
        let y = self.norm(&b.norm, y)?;
        Ok(self.tape.relu(y))
    }

    fn residual(&mut self, r: &Residual, x: Var) -> Result<Var> {
        let y = self.conv_block(&r.first, x)?;
        let y = self.conv(&r.second, y)?;
        let y = self.norm(&r.second_norm, y)?;
        let shortcut = match &r.projection {
            Some(p) => self.conv(p, x)?,
            None => x,
        };
        let sum = self.tape.add(shortcut, y)?;
        Ok(self.tape.relu(sum))
    }

    fn record(&mut self, name: String, v: Var) {
        self.trace.push((name, v));
    }
}

impl<T: Real> Model<T> {
    /// Builds the network with He-normal weights, zero biases and identity
    /// batch norms.
    pub fn build(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            rng,
            params: Vec::new(),
            norms: Vec::new(),
        };

        let mut encoders = Vec::with_capacity(config.depth);
        let mut cin = config.input_channels;
        for (i, &width) in config.encoder_kernels.iter().enumerate() {
            let conv = b.conv_block(&format!("enc{i}.conv"), cin, width);
            let residual = b.residual(&format!("enc{i}.res"), width, width);
            encoders.push(EncoderUnit { conv, residual });
            cin = width;
        }

        let mut bottleneck = Vec::with_capacity(config.dilation_rates.len());
        for (k, &rate) in config.dilation_rates.iter().enumerate() {
            bottleneck.push(b.conv(
                &format!("bottleneck.conv{k}"),
                cin,
                config.bottleneck_channels,
                3,
                Conv2dOptions::dilated(rate),
            ));
            cin = config.bottleneck_channels;
        }

        let mut decoders = Vec::with_capacity(config.depth);
        for (j, &width) in config.decoder_kernels.iter().enumerate() {
            let up = b.up_conv(&format!("dec{j}.up"), cin, width);
            let up_norm = b.norm(&format!("dec{j}.up.bn"), width);
            let skip = config.encoder_kernels[config.depth - 1 - j];
            let conv = b.conv_block(&format!("dec{j}.conv"), width + skip, width);
            let residual = b.residual(&format!("dec{j}.res"), width, width);
            decoders.push(DecoderUnit {
                up,
                up_norm,
                conv,
                residual,
            });
            cin = width;
        }

        let head = b.conv("head", cin, 1, 1, Conv2dOptions::same());

        Ok(Model {
            config,
            params: b.params,
            norms: b.norms,
            encoders,
            bottleneck,
            decoders,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn norm_buffers(&self) -> &[NormBuffers<T>] {
        &self.norms
    }

    pub fn norm_buffers_mut(&mut self) -> &mut [NormBuffers<T>] {
        &mut self.norms
    }

    /// Number of learnable scalars (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Records a forward pass over `input` (`[B, C, H, W]`).
    ///
    /// Parameters enter the tape as differentiable leaves. In training mode
    /// batch norms use batch statistics (returned, not applied) and dropout
    /// draws its mask from `rng`; otherwise the pass is deterministic.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<ForwardPass<T>> {
        let [_, c, h, w] = tape.value(input).dims4()?;
        if c != self.config.input_channels {
            return Err(Error::dim(format!(
                "model expects {} input channels, got {c}",
                self.config.input_channels
            )));
        }
        let factor = self.config.downsampling();
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::dim(format!(
                "input {h}×{w} is not divisible by 2^depth = {factor}"
            )));
        }

        let params = self
            .params
            .iter()
            .map(|p| tape.param(p.value.clone()))
            .collect();
        let mut pass = Pass {
            tape,
            model: self,
            params,
            batch_stats: vec![None; self.norms.len()],
            trace: Vec::new(),
            training,
        };

        let mut x = input;
        let mut skips = Vec::with_capacity(self.encoders.len());
        for (i, unit) in self.encoders.iter().enumerate() {
            let features = pass.conv_block(&unit.conv, x)?;
            pass.record(format!("enc{i}.skip"), features);
            skips.push(features);
            let pooled = pass.tape.maxpool2d(features)?;
            x = pass.residual(&unit.residual, pooled)?;
            pass.record(format!("enc{i}.out"), x);
        }

        for (k, conv) in self.bottleneck.iter().enumerate() {
            let y = pass.conv(conv, x)?;
            x = pass.tape.relu(y);
            pass.record(format!("bottleneck.conv{k}"), x);
        }
        x = pass
            .tape
            .dropout(x, self.config.dropout_rate, training, rng)?;

        for (j, unit) in self.decoders.iter().enumerate() {
            let up = pass.up_conv(&unit.up, x)?;
            let up = pass.norm(&unit.up_norm, up)?;
            pass.record(format!("dec{j}.up"), up);
            let skip = skips.pop().expect("one skip per decoder level");
            let merged = pass.tape.concat_channels(up, skip)?;
            let y = pass.conv_block(&unit.conv, merged)?;
            x = pass.residual(&unit.residual, y)?;
            pass.record(format!("dec{j}.out"), x);
        }

        let logits = pass.conv(&self.head, x)?;
        let output = pass.tape.sigmoid(logits);

        Ok(ForwardPass {
            output,
            params: pass.params,
            batch_stats: pass.batch_stats,
            trace: pass.trace,
        })
    }

    /// Inference-mode probability map for a `[B, C, H, W]` batch.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let input = tape.constant(batch.clone());
        // dropout is inactive outside training, so the generator is never drawn from
        let mut rng = crate::seeded_rng(0);
        let pass = self.forward(&mut tape, input, false, &mut rng)?;
        Ok(tape.value(pass.output).clone())
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[Option<BatchStats<T>>]) {
        for (buffers, s) in self.norms.iter_mut().zip(stats) {
            if let Some(s) = s {
                buffers.state.update(s);
            }
        }
    }

    /// Converts every parameter and buffer to another element type.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|n| NormBuffers {
                    prefix: n.prefix.clone(),
                    state: BatchNormState {
                        running_mean: n.state.running_mean.iter().map(|v| U::of(v.as_f64())).collect(),
                        running_var: n.state.running_var.iter().map(|v| U::of(v.as_f64())).collect(),
                        momentum: U::of(n.state.momentum.as_f64()),
                        epsilon: U::of(n.state.epsilon.as_f64()),
                    },
                })
                .collect(),
            encoders: self.encoders.clone(),
            bottleneck: self.bottleneck.clone(),
            decoders: self.decoders.clone(),
            head: self.head,
        }
    }

    /// Radius (in input pixels, Chebyshev) beyond which an input change
    /// cannot reach an output pixel, accumulated along the deepest path.
    pub fn receptive_radius(&self) -> usize {
        let conv_reach = |k: usize, dilation: usize, jump: usize| (k - 1) / 2 * dilation * jump;
        let mut radius = 0;
        let mut jump = 1;
        for _ in &self.encoders {
            radius += conv_reach(3, 1, jump);
            // a 2×2 window reaches one extra pixel at the current resolution
            radius += jump;
            jump *= 2;
            radius += 2 * conv_reach(3, 1, jump);
        }
        for &rate in &self.config.dilation_rates {
            radius += conv_reach(3, rate, jump);
        }
        for _ in &self.decoders {
            // the 2×2 stride-2 up-convolution maps each fine pixel to one coarse pixel
            radius += jump;
            jump /= 2;
            radius += 3 * conv_reach(3, 1, jump);
        }
        radius
    }
}

/// Draws a reproducible random batch, mainly for tests and examples.
pub fn random_batch<T: Real>(shape: [usize; 4], rng: &mut SeededRng) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::of(rng.gen_range(-1.0..1.0)))
}
