//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a record holding its output value, its input
//! node ids and whatever context its reverse rule needs. `backward` walks
//! the records once in reverse and accumulates gradients into leaves.
//! Build a fresh [`Tape`] per training step.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{
    self, broadcast_kind, matmul_t, BinaryOp, Broadcast, PoolIndices, ReduceOp, Shape, Tensor,
};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
    tape: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    LeakyRelu(f32),
    Tanh,
    Sigmoid,
}

impl Unary {
    fn apply(self, x: f32) -> f32 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn derivative(self, x: f32, y: f32) -> f32 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(slope) => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Per-channel batch statistics realized by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    /// Biased (population) variance.
    pub var: Vec<f32>,
}

/// Bounds applied to probabilities before taking logs in [`Tape::bce`].
pub const BCE_CLAMP: f64 = 1e-7;

enum Op {
    Leaf,
    Binary {
        op: BinaryOp,
        a: usize,
        b: usize,
        bc: Broadcast,
    },
    Matmul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
    },
    Transpose(usize),
    Reshape(usize),
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        x: usize,
        indices: PoolIndices,
    },
    Upsample(usize),
    Reduce {
        x: usize,
        op: ReduceOp,
        axes: Vec<usize>,
        arg: Vec<usize>,
    },
    Unary {
        x: usize,
        f: Unary,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor,
        inv_std: Vec<f32>,
        train: bool,
    },
    SoftmaxCe {
        logits: usize,
        probs: Tensor,
        labels: Vec<usize>,
    },
    Bce {
        pred: usize,
        target: Tensor,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    /// Accumulated gradients of leaves, persisting across `backward` calls.
    grads: Vec<Option<Tensor>>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(Error::TapeMismatch);
        }
        Ok(v.id)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let id = self.nodes.len();
        // ops without differentiable inputs are recorded as plain constants
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var { id, tape: self.id }
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.rg(self.idx(v)?))
    }

    /// Accumulated gradient of a leaf, absent until a backward pass reaches it.
    pub fn grad(&self, v: Var) -> Result<Option<&Tensor>> {
        Ok(self.grads[self.idx(v)?].as_ref())
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Copies `v`'s value onto a fresh leaf with no history.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v)?.clone();
        Ok(self.constant(value))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let bc = broadcast_kind(self.nodes[ai].value.shape(), self.nodes[bi].value.shape())?;
        let value = Tensor::ew_binary(op, &self.nodes[ai].value, &self.nodes[bi].value)?;
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(value, rg, Op::Binary { op, a: ai, b: bi, bc }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) @ op(b)` with optional transposes, avoiding explicit copies.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let value = matmul_t(&self.nodes[ai].value, ta, &self.nodes[bi].value, tb)?;
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(value, rg, Op::Matmul { a: ai, b: bi, ta, tb }))
    }

    pub fn transpose2d(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let value = self.nodes[ai].value.transpose2d()?;
        let rg = self.rg(ai);
        Ok(self.push(value, rg, Op::Transpose(ai)))
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let ai = self.idx(a)?;
        let value = self.nodes[ai].value.reshape(dims)?;
        let rg = self.rg(ai);
        Ok(self.push(value, rg, Op::Reshape(ai)))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let value = tensor::conv2d(
            &self.nodes[xi].value,
            &self.nodes[wi].value,
            bi.map(|b| &self.nodes[b].value),
            stride,
            pad,
        )?;
        let rg = self.rg(xi) || self.rg(wi) || bi.is_some_and(|b| self.rg(b));
        Ok(self.push(
            value,
            rg,
            Op::Conv2d {
                x: xi,
                w: wi,
                b: bi,
                stride,
                pad,
            },
        ))
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let (value, indices) = tensor::maxpool2d(&self.nodes[xi].value, k, stride)?;
        let rg = self.rg(xi);
        Ok(self.push(value, rg, Op::MaxPool { x: xi, indices }))
    }

    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = tensor::upsample_nearest2x(&self.nodes[xi].value)?;
        let rg = self.rg(xi);
        Ok(self.push(value, rg, Op::Upsample(xi)))
    }

    pub fn reduce(&mut self, op: ReduceOp, x: Var, axes: &[usize]) -> Result<Var> {
        let xi = self.idx(x)?;
        let (value, arg) = self.nodes[xi].value.reduce_with_index(op, axes)?;
        let rg = self.rg(xi);
        Ok(self.push(
            value,
            rg,
            Op::Reduce {
                x: xi,
                op,
                axes: axes.to_vec(),
                arg,
            },
        ))
    }

    /// Sum over every axis, producing a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let rank = self.value(x)?.shape().rank();
        let axes: Vec<usize> = (0..rank).collect();
        self.reduce(ReduceOp::Sum, x, &axes)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let rank = self.value(x)?.shape().rank();
        let axes: Vec<usize> = (0..rank).collect();
        self.reduce(ReduceOp::Mean, x, &axes)
    }

    pub fn unary(&mut self, f: Unary, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.nodes[xi].value.map(|v| f.apply(v));
        let rg = self.rg(xi);
        Ok(self.push(value, rg, Op::Unary { x: xi, f }))
    }

    /// Per-channel normalization of `x: [N, C, ...]`.
    ///
    /// With `running = None` the batch statistics are used and returned;
    /// otherwise the given `(mean, var)` are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f32], &[f32])>,
        eps: f32,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (xi, gi, bi) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let xv = &self.nodes[xi].value;
        let dims = xv.dims();
        if dims.len() != 2 && dims.len() != 4 {
            return Err(Error::shape("batch_norm", format!("input {dims:?}")));
        }
        let (n, c) = (dims[0], dims[1]);
        let inner: usize = dims[2..].iter().product();
        for p in [gi, bi] {
            if self.nodes[p].value.dims() != [c] {
                return Err(Error::shape(
                    "batch_norm",
                    format!("affine {:?} for {c} channels", self.nodes[p].value.dims()),
                ));
            }
        }
        let count = n * inner;
        let data = xv.data();
        let (mean, var, stats) = match running {
            Some((rm, rv)) => {
                if rm.len() != c || rv.len() != c {
                    return Err(Error::shape("batch_norm", "running statistics length"));
                }
                (
                    rm.iter().map(|&v| v as f64).collect::<Vec<_>>(),
                    rv.iter().map(|&v| v as f64).collect::<Vec<_>>(),
                    None,
                )
            }
            None => {
                if count < 2 {
                    return Err(Error::DegenerateBatch(count));
                }
                let mut mean = vec![0.0f64; c];
                let mut sq = vec![0.0f64; c];
                for (i, &v) in data.iter().enumerate() {
                    mean[(i / inner) % c] += v as f64;
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for (i, &v) in data.iter().enumerate() {
                    let ch = (i / inner) % c;
                    sq[ch] += (v as f64 - mean[ch]).powi(2);
                }
                let var: Vec<f64> = sq.iter().map(|s| s / count as f64).collect();
                let stats = BatchStats {
                    mean: mean.iter().map(|&v| v as f32).collect(),
                    var: var.iter().map(|&v| v as f32).collect(),
                };
                (mean, var, Some(stats))
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps as f64).sqrt()).collect();
        let g = self.nodes[gi].value.data();
        let b = self.nodes[bi].value.data();
        let mut xhat = Vec::with_capacity(data.len());
        let mut out = Vec::with_capacity(data.len());
        for (i, &v) in data.iter().enumerate() {
            let ch = (i / inner) % c;
            let h = (v as f64 - mean[ch]) * inv_std[ch];
            xhat.push(h as f32);
            out.push((g[ch] as f64 * h + b[ch] as f64) as f32);
        }
        let shape = xv.shape().clone();
        let rg = self.rg(xi) || self.rg(gi) || self.rg(bi);
        let var_out = self.push(
            Tensor::from_parts(shape.clone(), out),
            rg,
            Op::BatchNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                xhat: Tensor::from_parts(shape, xhat),
                inv_std: inv_std.iter().map(|&v| v as f32).collect(),
                train: running.is_none(),
            },
        );
        Ok((var_out, stats))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let li = self.idx(logits)?;
        let lv = &self.nodes[li].value;
        let (n, k) = match lv.dims() {
            &[n, k] if n == labels.len() => (n, k),
            d => {
                return Err(Error::shape(
                    "softmax_cross_entropy",
                    format!("logits {d:?} for {} labels", labels.len()),
                ))
            }
        };
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::BadLabel {
                label: bad,
                classes: k,
            });
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut total = 0.0f64;
        for (row, &label) in lv.data().chunks_exact(k).zip(labels) {
            let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
            let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[label] as f64;
            probs.extend(row.iter().map(|&v| (v as f64 - lse).exp() as f32));
        }
        let loss = Tensor::scalar((total / n as f64) as f32);
        let rg = self.rg(li);
        Ok(self.push(
            loss,
            rg,
            Op::SoftmaxCe {
                logits: li,
                probs: Tensor::from_parts(lv.shape().clone(), probs),
                labels: labels.to_vec(),
            },
        ))
    }

    /// Mean binary cross-entropy of probabilities against `{0, 1}` targets,
    /// with probabilities clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
    pub fn bce(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let pi = self.idx(pred)?;
        let pv = &self.nodes[pi].value;
        if pv.shape() != target.shape() {
            return Err(Error::shape(
                "bce",
                format!("{:?} vs {:?}", pv.dims(), target.dims()),
            ));
        }
        let total: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let p = (p as f64).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                let t = t as f64;
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        let loss = Tensor::scalar((total / pv.numel() as f64) as f32);
        let rg = self.rg(pi);
        Ok(self.push(
            loss,
            rg,
            Op::Bce {
                pred: pi,
                target: target.clone(),
            },
        ))
    }

    /// Accumulates d(root)/d(leaf) into every reachable leaf that requires
    /// gradients. The root must hold exactly one element.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let ri = self.idx(root)?;
        let rv = &self.nodes[ri].value;
        if rv.numel() != 1 {
            return Err(Error::NonScalarRoot(rv.dims().to_vec()));
        }
        if !self.rg(ri) {
            return Ok(());
        }
        let mut local: Vec<Option<Tensor>> = (0..=ri).map(|_| None).collect();
        local[ri] = Some(rv.full_like(1.0));
        for i in (0..=ri).rev() {
            let Some(g) = local[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g),
                }
                continue;
            }
            for (input, grad) in self.reverse(i, &g)? {
                if !self.nodes[input].requires_grad {
                    continue;
                }
                match &mut local[input] {
                    Some(acc) => acc.add_assign(&grad)?,
                    slot => *slot = Some(grad),
                }
            }
        }
        Ok(())
    }

    /// Gradients flowing from node `i` (with upstream `g`) into its inputs.
    fn reverse(&self, i: usize, g: &Tensor) -> Result<Vec<(usize, Tensor)>> {
        let val = |j: usize| &self.nodes[j].value;
        let out = &self.nodes[i].value;
        let mut grads = Vec::with_capacity(3);
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Binary { op, a, b, bc } => {
                let (av, bv) = (val(a), val(b));
                let reduce_b = |t: Tensor| -> Tensor {
                    match bc {
                        Broadcast::Same => t,
                        Broadcast::PerChannel { channels, inner } => {
                            let mut acc = vec![0.0f64; channels];
                            for (k, &v) in t.data().iter().enumerate() {
                                acc[(k / inner) % channels] += v as f64;
                            }
                            Tensor::from_parts(
                                bv.shape().clone(),
                                acc.into_iter().map(|v| v as f32).collect(),
                            )
                        }
                    }
                };
                match op {
                    BinaryOp::Add => {
                        grads.push((a, g.clone()));
                        grads.push((b, reduce_b(g.clone())));
                    }
                    BinaryOp::Sub => {
                        grads.push((a, g.clone()));
                        grads.push((b, reduce_b(g.scale(-1.0))));
                    }
                    BinaryOp::Mul => {
                        grads.push((a, Tensor::ew_binary(BinaryOp::Mul, g, bv)?));
                        grads.push((b, reduce_b(g.mul(av)?)));
                    }
                    BinaryOp::Div => {
                        grads.push((a, Tensor::ew_binary(BinaryOp::Div, g, bv)?));
                        // d(a/b)/db = -(a/b)/b = -out/b
                        let t = g.mul(out)?;
                        let t = Tensor::ew_binary(BinaryOp::Div, &t, bv)?.scale(-1.0);
                        grads.push((b, reduce_b(t)));
                    }
                }
            }
            &Op::Matmul { a, b, ta, tb } => {
                let (av, bv) = (val(a), val(b));
                // C = op(A) op(B); dop(A) = G op(B)^T, dop(B) = op(A)^T G
                let da = if ta {
                    matmul_t(bv, tb, g, true)?
                } else {
                    matmul_t(g, false, bv, !tb)?
                };
                let db = if tb {
                    matmul_t(g, true, av, ta)?
                } else {
                    matmul_t(av, !ta, g, false)?
                };
                grads.push((a, da));
                grads.push((b, db));
            }
            &Op::Transpose(a) => grads.push((a, g.transpose2d()?)),
            &Op::Reshape(a) => grads.push((a, g.reshape(val(a).dims())?)),
            &Op::Conv2d { x, w, b, stride, pad } => {
                let cg = tensor::conv2d_backward(val(x), val(w), g, stride, pad)?;
                grads.push((x, cg.input));
                grads.push((w, cg.weight));
                if let Some(b) = b {
                    grads.push((b, cg.bias));
                }
            }
            Op::MaxPool { x, indices } => {
                grads.push((*x, tensor::maxpool2d_backward(val(*x).shape(), indices, g)?));
            }
            &Op::Upsample(x) => grads.push((x, tensor::upsample_nearest2x_backward(g)?)),
            Op::Reduce { x, op, axes, arg } => {
                let xs = val(*x).shape();
                let gx = match op {
                    ReduceOp::Sum => Tensor::expand_reduced(g, xs, axes, 1.0),
                    ReduceOp::Mean => {
                        let count: usize = axes.iter().map(|&a| xs.dims()[a]).product();
                        Tensor::expand_reduced(g, xs, axes, 1.0 / count as f32)
                    }
                    ReduceOp::Max => {
                        let mut d = vec![0.0f32; xs.numel()];
                        for (&src, &gv) in arg.iter().zip(g.data()) {
                            d[src] += gv;
                        }
                        Tensor::from_parts(xs.clone(), d)
                    }
                };
                grads.push((*x, gx));
            }
            &Op::Unary { x, f } => {
                let xv = val(x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data().iter().zip(out.data()))
                    .map(|(&gv, (&xv, &yv))| gv * f.derivative(xv, yv))
                    .collect();
                grads.push((x, Tensor::from_parts(xv.shape().clone(), data)));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let dims = xhat.dims();
                let c = dims[1];
                let inner: usize = dims[2..].iter().product();
                let count = (dims[0] * inner) as f64;
                let mut sum_g = vec![0.0f64; c];
                let mut sum_gx = vec![0.0f64; c];
                for (k, (&gv, &h)) in g.data().iter().zip(xhat.data()).enumerate() {
                    let ch = (k / inner) % c;
                    sum_g[ch] += gv as f64;
                    sum_gx[ch] += gv as f64 * h as f64;
                }
                let gam = val(*gamma).data();
                let dx: Vec<f32> = g
                    .data()
                    .iter()
                    .zip(xhat.data())
                    .enumerate()
                    .map(|(k, (&gv, &h))| {
                        let ch = (k / inner) % c;
                        let scale = gam[ch] as f64 * inv_std[ch] as f64;
                        if *train {
                            (scale * (gv as f64 - sum_g[ch] / count - h as f64 * sum_gx[ch] / count))
                                as f32
                        } else {
                            (scale * gv as f64) as f32
                        }
                    })
                    .collect();
                let to_t = |v: Vec<f64>| {
                    Tensor::from_parts(Shape::new(vec![c]).expect("channel count"), v.into_iter().map(|x| x as f32).collect())
                };
                grads.push((*x, Tensor::from_parts(xhat.shape().clone(), dx)));
                grads.push((*gamma, to_t(sum_gx)));
                grads.push((*beta, to_t(sum_g)));
            }
            Op::SoftmaxCe {
                logits,
                probs,
                labels,
            } => {
                let k = probs.dims()[1];
                let scale = g.data()[0] / labels.len() as f32;
                let mut d = probs.data().to_vec();
                for (row, &label) in d.chunks_exact_mut(k).zip(labels) {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                grads.push((*logits, Tensor::from_parts(probs.shape().clone(), d)));
            }
            Op::Bce { pred, target } => {
                let pv = val(*pred);
                let scale = g.data()[0] as f64 / pv.numel() as f64;
                let d = pv
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| {
                        let p = (p as f64).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        (scale * (p - t as f64) / (p * (1.0 - p))) as f32
                    })
                    .collect();
                grads.push((*pred, Tensor::from_parts(pv.shape().clone(), d)));
            }
        }
        Ok(grads)
    }
}
