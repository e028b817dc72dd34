//! Dense row-major `f32` tensors and the kernels layers are built from.
//!
//! Tensors are plain values: every operation returns a fresh tensor and
//! never aliases its inputs. Kernels accumulate in `f64` and round once on
//! output.

mod kernels;
mod spatial;

use std::fmt;

use crate::error::{Error, Result};

pub use kernels::gemm;
pub use spatial::{
    conv2d, conv2d_backward, conv_output_size, maxpool2d, maxpool2d_backward, upsample_nearest2x,
    upsample_nearest2x_backward, Conv2dGrads, PoolIndices,
};

const MAX_RANK: usize = 4;
const MAX_ELEMENTS: usize = 1 << 31;

/// Ordered list of dimensions, each at least one.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.len() > MAX_RANK || dims.contains(&0) {
            return Err(Error::InvalidShape(dims));
        }
        let mut count: usize = 1;
        for &d in &dims {
            count = count
                .checked_mul(d)
                .filter(|&c| c <= MAX_ELEMENTS)
                .ok_or_else(|| Error::InvalidShape(dims.clone()))?;
        }
        Ok(Shape(dims))
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl TryFrom<&[usize]> for Shape {
    type Error = Error;

    fn try_from(dims: &[usize]) -> Result<Self> {
        Shape::new(dims.to_vec())
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

/// How `b` lines up against `a` in an elementwise op.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// `b` is `[C]`, `a` is `[N, C, ...]`; `inner` is the spatial size.
    PerChannel { channels: usize, inner: usize },
}

pub(crate) fn broadcast_kind(a: &Shape, b: &Shape) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    let ad = a.dims();
    let bd = b.dims();
    if bd.len() == 1 && (ad.len() == 2 || ad.len() == 4) && ad[1] == bd[0] {
        return Ok(Broadcast::PerChannel {
            channels: bd[0],
            inner: ad[2..].iter().product(),
        });
    }
    Err(Error::shape(
        "elementwise",
        format!("{ad:?} vs {bd:?} (only identical or per-channel shapes)"),
    ))
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(shape)?;
        if shape.numel() != data.len() {
            return Err(Error::shape(
                "new",
                format!("{} values for shape {:?}", data.len(), shape),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f32) -> Result<Self> {
        let shape = Shape::new(shape.to_vec())?;
        let n = shape.numel();
        Ok(Tensor {
            shape,
            data: vec![v; n],
        })
    }

    pub fn scalar(v: f32) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![v],
        }
    }

    pub fn zeros_like(&self) -> Self {
        self.full_like(0.0)
    }

    pub fn full_like(&self, v: f32) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![v; self.data.len()],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f32> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "{what}: element {i} is {}",
                self.data[i]
            ))),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f32) -> Tensor {
        self.map(|v| v * s)
    }

    /// In-place `self += other` for identical shapes.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn ew_binary(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let kind = broadcast_kind(&a.shape, &b.shape)?;
        if op == BinaryOp::Div {
            if let Some(i) = b.data.iter().position(|&v| v == 0.0) {
                return Err(Error::DivisionByZero(i));
            }
        }
        let f = |x: f32, y: f32| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Div => x / y,
        };
        let data = match kind {
            Broadcast::Same => a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::PerChannel { channels, inner } => a
                .data
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data[(i / inner) % channels]))
                .collect(),
        };
        Ok(Tensor {
            shape: a.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::ew_binary(BinaryOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::ew_binary(BinaryOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::ew_binary(BinaryOp::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::ew_binary(BinaryOp::Div, self, other)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        matmul_t(self, false, other, false)
    }

    pub fn transpose2d(&self) -> Result<Tensor> {
        let [r, c] = self.matrix_dims("transpose2d")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: Shape(vec![c, r]),
            data: out,
        })
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let shape = Shape::new(dims.to_vec())?;
        if shape.numel() != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() as f32
    }

    /// Reduces over `axes`, dropping them from the output shape.
    pub fn reduce(&self, op: ReduceOp, axes: &[usize]) -> Result<Tensor> {
        self.reduce_with_index(op, axes).map(|(t, _)| t)
    }

    /// Like [`Tensor::reduce`], also returning for each output element the
    /// flat input index that produced it (meaningful for `Max` only).
    pub(crate) fn reduce_with_index(
        &self,
        op: ReduceOp,
        axes: &[usize],
    ) -> Result<(Tensor, Vec<usize>)> {
        let dims = self.dims();
        let mut reduced = vec![false; dims.len()];
        for &a in axes {
            if a >= dims.len() || reduced[a] {
                return Err(Error::shape(
                    "reduce",
                    format!("bad axis {a} for shape {dims:?}"),
                ));
            }
            reduced[a] = true;
        }
        let out_dims: Vec<usize> = dims
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let out_n: usize = out_dims.iter().product();
        let count: usize = dims
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&d, _)| d)
            .product();

        // output stride contributed by each input axis (0 for reduced axes)
        let mut out_stride = vec![0usize; dims.len()];
        let mut s = 1;
        for i in (0..dims.len()).rev() {
            if !reduced[i] {
                out_stride[i] = s;
                s *= dims[i];
            }
        }

        let mut acc = vec![
            match op {
                ReduceOp::Max => f64::NEG_INFINITY,
                _ => 0.0,
            };
            out_n
        ];
        let mut arg = vec![0usize; out_n];
        let mut idx = vec![0usize; dims.len()];
        for (flat, &v) in self.data.iter().enumerate() {
            let o: usize = idx.iter().zip(&out_stride).map(|(i, s)| i * s).sum();
            match op {
                ReduceOp::Max => {
                    if (v as f64) > acc[o] {
                        acc[o] = v as f64;
                        arg[o] = flat;
                    }
                }
                _ => acc[o] += v as f64,
            }
            for d in (0..dims.len()).rev() {
                idx[d] += 1;
                if idx[d] < dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        if op == ReduceOp::Mean {
            for a in &mut acc {
                *a /= count as f64;
            }
        }
        let out = Tensor {
            shape: Shape(out_dims),
            data: acc.into_iter().map(|v| v as f32).collect(),
        };
        Ok((out, arg))
    }

    /// Broadcasts a tensor produced by reducing `axes` of `self`'s shape back
    /// to the full shape, optionally scaling every value.
    pub(crate) fn expand_reduced(reduced: &Tensor, full: &Shape, axes: &[usize], scale: f32) -> Tensor {
        let dims = full.dims();
        let mut out_stride = vec![0usize; dims.len()];
        let mut s = 1;
        for i in (0..dims.len()).rev() {
            if !axes.contains(&i) {
                out_stride[i] = s;
                s *= dims[i];
            }
        }
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(full.numel());
        for _ in 0..full.numel() {
            let o: usize = idx.iter().zip(&out_stride).map(|(i, s)| i * s).sum();
            data.push(reduced.data[o] * scale);
            for d in (0..dims.len()).rev() {
                idx[d] += 1;
                if idx[d] < dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Tensor {
            shape: full.clone(),
            data,
        }
    }

    fn matrix_dims(&self, op: &'static str) -> Result<[usize; 2]> {
        match self.dims() {
            &[r, c] => Ok([r, c]),
            d => Err(Error::shape(op, format!("expected a matrix, got {d:?}"))),
        }
    }
}

/// `op(a) @ op(b)` where `op` optionally transposes a matrix.
pub(crate) fn matmul_t(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<Tensor> {
    let [ar, ac] = a.matrix_dims("matmul")?;
    let [br, bc] = b.matrix_dims("matmul")?;
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("{:?} x {:?} (transposed: {ta}, {tb})", a.dims(), b.dims()),
        ));
    }
    let af = kernels::to_f64(&a.data);
    let bf = kernels::to_f64(&b.data);
    let mut c = vec![0.0f64; m * n];
    gemm(m, k, n, &af, ta, &bf, tb, &mut c, false);
    Ok(Tensor {
        shape: Shape(vec![m, n]),
        data: kernels::to_f32(&c),
    })
}
