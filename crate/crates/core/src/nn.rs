//! Mode-aware layers and the sequential container that chains them.

use std::fmt;

use crate::autodiff::{Tape, Unary, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{conv_output_size, Tensor};

/// Epsilon added to the variance in every batch norm.
pub const BN_EPS: f32 = 1e-5;

/// Running-statistics momentum used by `BatchNorm2d(c, 0.8)`: the weight on
/// the new batch statistic. Interpreted as momentum, not epsilon.
pub const BN_MOMENTUM: f32 = 0.8;

/// Momentum of a batch norm built without an explicit second argument.
pub const BN_DEFAULT_MOMENTUM: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// What a parameter is, so optimizers can exempt biases and norm affines
/// from weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    Norm,
}

#[derive(Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub role: ParamRole,
    bound: Option<Var>,
}

impl fmt::Debug for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Param")
            .field("value", &self.value)
            .field("role", &self.role)
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

impl Param {
    pub fn new(value: Tensor, role: ParamRole) -> Self {
        Param {
            value,
            grad: None,
            role,
            bound: None,
        }
    }
}

fn xavier_uniform(dims: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Tensor> {
    let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
    let mut t = Tensor::zeros(dims)?;
    for v in t.data_mut() {
        *v = rng.range(-limit, limit);
    }
    Ok(t)
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense {
        weight: Param,
        bias: Param,
    },
    Conv2d {
        weight: Param,
        bias: Param,
        stride: usize,
        pad: usize,
    },
    BatchNorm2d {
        gamma: Param,
        beta: Param,
        running_mean: Tensor,
        running_var: Tensor,
        momentum: f32,
    },
    Activation(Unary),
    Dropout2d {
        p: f32,
    },
    Upsample2x,
    MaxPool2d,
    Flatten,
    /// Reshapes each sample to the given dims (batch axis kept).
    Reshape(Vec<usize>),
}

impl Layer {
    /// Dense `out = x W^T + b` with Xavier-uniform `W: [out, in]`.
    pub fn dense(inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Layer> {
        Ok(Layer::Dense {
            weight: Param::new(
                xavier_uniform(&[outputs, inputs], inputs, outputs, rng)?,
                ParamRole::Weight,
            ),
            bias: Param::new(Tensor::zeros(&[outputs])?, ParamRole::Bias),
        })
    }

    pub fn conv2d(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Result<Layer> {
        if stride == 0 || k == 0 {
            return Err(Error::InvalidSpec(format!("conv k={k} stride={stride}")));
        }
        Ok(Layer::Conv2d {
            weight: Param::new(
                xavier_uniform(&[cout, cin, k, k], cin * k * k, cout * k * k, rng)?,
                ParamRole::Weight,
            ),
            bias: Param::new(Tensor::zeros(&[cout])?, ParamRole::Bias),
            stride,
            pad,
        })
    }

    pub fn batch_norm2d(channels: usize, momentum: f32) -> Result<Layer> {
        Ok(Layer::BatchNorm2d {
            gamma: Param::new(Tensor::full(&[channels], 1.0)?, ParamRole::Norm),
            beta: Param::new(Tensor::zeros(&[channels])?, ParamRole::Norm),
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], 1.0)?,
            momentum,
        })
    }

    pub fn dropout2d(p: f32) -> Result<Layer> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::BadProbability(p));
        }
        Ok(Layer::Dropout2d { p })
    }

    pub fn leaky_relu(slope: f32) -> Layer {
        Layer::Activation(Unary::LeakyRelu(slope))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::BatchNorm2d { .. } => "batchnorm2d",
            Layer::Activation(Unary::Relu) => "relu",
            Layer::Activation(Unary::LeakyRelu(_)) => "leaky_relu",
            Layer::Activation(Unary::Tanh) => "tanh",
            Layer::Activation(Unary::Sigmoid) => "sigmoid",
            Layer::Dropout2d { .. } => "dropout2d",
            Layer::Upsample2x => "upsample2x",
            Layer::MaxPool2d => "maxpool2d",
            Layer::Flatten => "flatten",
            Layer::Reshape(_) => "reshape",
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => {
                vec![("weight", weight), ("bias", bias)]
            }
            Layer::BatchNorm2d { gamma, beta, .. } => vec![("gamma", gamma), ("beta", beta)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => {
                vec![("weight", weight), ("bias", bias)]
            }
            Layer::BatchNorm2d { gamma, beta, .. } => vec![("gamma", gamma), ("beta", beta)],
            _ => Vec::new(),
        }
    }

    pub fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::BatchNorm2d {
                running_mean,
                running_var,
                ..
            } => vec![("running_mean", running_mean), ("running_var", running_var)],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Layer::BatchNorm2d {
                running_mean,
                running_var,
                ..
            } => vec![("running_mean", running_mean), ("running_var", running_var)],
            _ => Vec::new(),
        }
    }

    /// Output dims for input dims (batch axis included).
    pub fn output_dims(&self, dims: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |what: &str| {
            Err(Error::shape(
                "sequential",
                format!("{} cannot take input {dims:?}: {what}", self.kind()),
            ))
        };
        match self {
            Layer::Dense { weight, .. } => {
                let w = weight.value.dims();
                match dims {
                    &[n, f] if f == w[1] => Ok(vec![n, w[0]]),
                    _ => mismatch("expected [N, in_features]"),
                }
            }
            Layer::Conv2d {
                weight, stride, pad, ..
            } => {
                let w = weight.value.dims();
                match dims {
                    &[n, c, h, wd] if c == w[1] => {
                        match (
                            conv_output_size(h, w[2], *stride, *pad),
                            conv_output_size(wd, w[3], *stride, *pad),
                        ) {
                            (Some(ho), Some(wo)) => Ok(vec![n, w[0], ho, wo]),
                            _ => Err(Error::NonPositiveOutput {
                                op: "conv2d",
                                input: dims.to_vec(),
                            }),
                        }
                    }
                    _ => mismatch("channel count"),
                }
            }
            Layer::BatchNorm2d { gamma, .. } => match dims {
                [_, c, ..] if (dims.len() == 2 || dims.len() == 4) && *c == gamma.value.numel() => {
                    Ok(dims.to_vec())
                }
                _ => mismatch("channel count"),
            },
            Layer::Activation(_) => Ok(dims.to_vec()),
            Layer::Dropout2d { .. } => match dims.len() {
                2 | 4 => Ok(dims.to_vec()),
                _ => mismatch("expected [N, C, ...]"),
            },
            Layer::Upsample2x => match dims {
                &[n, c, h, w] => Ok(vec![n, c, 2 * h, 2 * w]),
                _ => mismatch("expected [N, C, H, W]"),
            },
            Layer::MaxPool2d => match dims {
                &[n, c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok(vec![n, c, h / 2, w / 2]),
                _ => mismatch("expected even [N, C, H, W]"),
            },
            Layer::Flatten => match dims {
                [n, rest @ ..] if !rest.is_empty() => Ok(vec![*n, rest.iter().product()]),
                _ => mismatch("expected a batch"),
            },
            Layer::Reshape(to) => match dims {
                [n, rest @ ..] if rest.iter().product::<usize>() == to.iter().product::<usize>() => {
                    let mut out = vec![*n];
                    out.extend(to);
                    Ok(out)
                }
                _ => mismatch("element count"),
            },
        }
    }

    /// Runs the layer. `track` registers parameters as gradient leaves;
    /// `train` carries the dropout RNG and switches batch norm to batch
    /// statistics. Returns the output, the parameter vars (when tracked)
    /// and any realized batch statistics.
    fn apply(
        &self,
        tape: &mut Tape,
        x: Var,
        track: bool,
        train: Option<&mut Rng>,
    ) -> Result<(Var, Vec<Var>, Option<crate::autodiff::BatchStats>)> {
        let bind = |tape: &mut Tape, p: &Param| tape.leaf(p.value.clone(), track);
        match self {
            Layer::Dense { weight, bias } => {
                let w = bind(tape, weight);
                let b = bind(tape, bias);
                let xw = tape.matmul_t(x, false, w, true)?;
                let y = tape.add(xw, b)?;
                Ok((y, vec![w, b], None))
            }
            Layer::Conv2d {
                weight,
                bias,
                stride,
                pad,
            } => {
                let w = bind(tape, weight);
                let b = bind(tape, bias);
                let y = tape.conv2d(x, w, Some(b), *stride, *pad)?;
                Ok((y, vec![w, b], None))
            }
            Layer::BatchNorm2d {
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            } => {
                let g = bind(tape, gamma);
                let b = bind(tape, beta);
                let running = match train {
                    Some(_) => None,
                    None => Some((running_mean.data(), running_var.data())),
                };
                let (y, stats) = tape.batch_norm(x, g, b, running, BN_EPS)?;
                Ok((y, vec![g, b], stats))
            }
            Layer::Activation(f) => Ok((tape.unary(*f, x)?, vec![], None)),
            Layer::Dropout2d { p } => {
                let Some(rng) = train else {
                    return Ok((x, vec![], None));
                };
                if *p == 0.0 {
                    return Ok((x, vec![], None));
                }
                let xv = tape.value(x)?;
                let dims = xv.dims().to_vec();
                let (n, c) = (dims[0], dims[1]);
                let inner: usize = dims[2..].iter().product();
                let keep = 1.0 / (1.0 - p);
                let mut mask = xv.zeros_like();
                let m = mask.data_mut();
                for plane in 0..n * c {
                    let v = if rng.uniform() < *p { 0.0 } else { keep };
                    m[plane * inner..(plane + 1) * inner].fill(v);
                }
                let mv = tape.constant(mask);
                Ok((tape.mul(x, mv)?, vec![], None))
            }
            Layer::Upsample2x => Ok((tape.upsample_nearest2x(x)?, vec![], None)),
            Layer::MaxPool2d => Ok((tape.maxpool2d(x, 2, 2)?, vec![], None)),
            Layer::Flatten | Layer::Reshape(_) => {
                let dims = tape.value(x)?.dims().to_vec();
                let out = self.output_dims(&dims)?;
                Ok((tape.reshape(x, &out)?, vec![], None))
            }
        }
    }
}

/// Ordered stack of layers with a unified `layer{i}.{name}` namespace.
#[derive(Debug, Clone)]
pub struct Sequential {
    layers: Vec<Layer>,
    input_dims: Vec<usize>,
    mode: Mode,
    rng: Rng,
}

impl Sequential {
    /// Builds the stack and validates it against a probe batch of one
    /// sample with per-sample dims `input_dims`.
    pub fn new(layers: Vec<Layer>, input_dims: &[usize], seed: u64) -> Result<Self> {
        let seq = Sequential {
            layers,
            input_dims: input_dims.to_vec(),
            mode: Mode::Train,
            rng: Rng::new(seed),
        };
        seq.output_dims(1)?;
        Ok(seq)
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    /// Output dims for a batch of `n`, checking every link of the chain.
    pub fn output_dims(&self, n: usize) -> Result<Vec<usize>> {
        let mut dims = vec![n];
        dims.extend(&self.input_dims);
        for (i, layer) in self.layers.iter().enumerate() {
            dims = layer.output_dims(&dims).map_err(|e| match e {
                Error::ShapeMismatch { detail, .. } => Error::ShapeMismatch {
                    op: "sequential",
                    detail: format!("layer {i}: {detail}"),
                },
                other => other,
            })?;
        }
        Ok(dims)
    }

    /// Per-layer output dims for a batch of `n`.
    pub fn trace_dims(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        let mut dims = vec![n];
        dims.extend(&self.input_dims);
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            dims = layer.output_dims(&dims)?;
            out.push(dims.clone());
        }
        Ok(out)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut Vec<Layer> {
        &mut self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Re-seeds the dropout stream.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = Rng::new(seed);
    }

    /// Forward pass recording parameters as gradient leaves.
    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.forward_with(tape, x, true)
    }

    /// Forward pass; with `track = false` the parameters enter the tape as
    /// constants and no reverse records are kept for them.
    pub fn forward_with(&mut self, tape: &mut Tape, x: Var, track: bool) -> Result<Var> {
        let train = self.mode == Mode::Train;
        let mut h = x;
        for layer in &mut self.layers {
            let rng = train.then_some(&mut self.rng);
            let (y, vars, stats) = layer.apply(tape, h, track, rng)?;
            for ((_, p), v) in layer.params_mut().into_iter().zip(vars) {
                p.bound = track.then_some(v);
            }
            if let (
                Some(stats),
                Layer::BatchNorm2d {
                    running_mean,
                    running_var,
                    momentum,
                    ..
                },
            ) = (stats, &mut *layer)
            {
                let m = *momentum;
                for (r, s) in running_mean.data_mut().iter_mut().zip(&stats.mean) {
                    *r = (1.0 - m) * *r + m * s;
                }
                for (r, s) in running_var.data_mut().iter_mut().zip(&stats.var) {
                    *r = (1.0 - m) * *r + m * s;
                }
            }
            h = y;
        }
        Ok(h)
    }

    /// Eval-mode inference that never mutates the model.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut h = tape.constant(x.clone());
        for layer in &self.layers {
            h = layer.apply(&mut tape, h, false, None)?.0;
        }
        Ok(tape.value(h)?.clone())
    }

    /// Adds the tape gradients of the most recent tracked forward pass into
    /// each parameter's `grad`.
    pub fn collect_grads(&mut self, tape: &Tape) -> Result<()> {
        for layer in &mut self.layers {
            for (_, p) in layer.params_mut() {
                let Some(v) = p.bound else { continue };
                let Some(g) = tape.grad(v)? else { continue };
                match &mut p.grad {
                    Some(acc) => acc.add_assign(g)?,
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            for (_, p) in layer.params_mut() {
                p.grad = None;
            }
        }
    }

    /// Parameters in canonical order (layer index, then weight/bias or
    /// gamma/beta).
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params()
                    .into_iter()
                    .map(move |(n, p)| (format!("layer{i}.{n}"), p))
            })
            .collect()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params_mut()
                    .into_iter()
                    .map(move |(n, p)| (format!("layer{i}.{n}"), p))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut().into_iter().map(|(_, p)| p))
            .collect()
    }

    pub fn named_buffers(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.buffers()
                    .into_iter()
                    .map(move |(n, b)| (format!("layer{i}.{n}"), b))
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.numel()).sum()
    }

    /// Every parameter and buffer, layer by layer, parameters first.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (n, p) in l.params() {
                out.push((format!("layer{i}.{n}"), p.value.clone()));
            }
            for (n, b) in l.buffers() {
                out.push((format!("layer{i}.{n}"), b.clone()));
            }
        }
        out
    }

    /// Overwrites parameters and buffers from a [`Sequential::state`]
    /// listing. Names and shapes must match exactly.
    pub fn load_state(&mut self, state: &[(String, Tensor)]) -> Result<()> {
        let expected = self.state();
        if expected.len() != state.len() {
            return Err(Error::shape(
                "load_state",
                format!("{} tensors for {} slots", state.len(), expected.len()),
            ));
        }
        for ((en, et), (n, t)) in expected.iter().zip(state) {
            if en != n || et.shape() != t.shape() {
                return Err(Error::shape(
                    "load_state",
                    format!("{n}{:?} where {en}{:?} expected", t.dims(), et.dims()),
                ));
            }
        }
        let mut it = state.iter();
        for l in &mut self.layers {
            for (_, p) in l.params_mut() {
                p.value = it.next().expect("length checked").1.clone();
                p.grad = None;
            }
            for (_, b) in l.buffers_mut() {
                *b = it.next().expect("length checked").1.clone();
            }
        }
        Ok(())
    }
}
