use super::kernels::{col2im, gemm, im2col, to_f32, to_f64, ConvGeom};
use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// `floor((size + 2*pad - k) / stride) + 1`, rejecting empty outputs.
pub fn conv_output_size(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || k == 0 || size + 2 * pad < k {
        return None;
    }
    Some((size + 2 * pad - k) / stride + 1)
}

fn nchw(x: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    match x.dims() {
        &[n, c, h, w] => Ok([n, c, h, w]),
        d => Err(Error::shape(op, format!("expected [N, C, H, W], got {d:?}"))),
    }
}

fn conv_geom(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<(usize, usize, ConvGeom)> {
    let [n, cin, h, wd] = nchw(x, "conv2d")?;
    let (cout, kh, kw) = match w.dims() {
        &[co, ci, kh, kw] if ci == cin => (co, kh, kw),
        d => {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {d:?} for input {:?}", x.dims()),
            ))
        }
    };
    let bad = || Error::NonPositiveOutput {
        op: "conv2d",
        input: x.dims().to_vec(),
    };
    let ho = conv_output_size(h, kh, stride, pad).ok_or_else(bad)?;
    let wo = conv_output_size(wd, kw, stride, pad).ok_or_else(bad)?;
    Ok((
        n,
        cout,
        ConvGeom {
            channels: cin,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        },
    ))
}

/// Column-matrix element budget per chunk of images.
const COLS_BUDGET: usize = 1 << 18;

/// How many images share one column matrix.
fn chunk_len(patch: usize, positions: usize, n: usize) -> usize {
    (COLS_BUDGET / (patch * positions).max(1)).clamp(1, n.max(1))
}

/// Cross-correlation of `x: [N, Cin, H, W]` with `w: [Cout, Cin, kh, kw]`
/// plus an optional per-output-channel bias. Zero padding.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let (n, cout, g) = conv_geom(x, w, stride, pad)?;
    if let Some(b) = b {
        if b.dims() != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {:?} for {cout} output channels", b.dims()),
            ));
        }
    }
    let wf = to_f64(w.data());
    let (kl, p) = (g.patch_len(), g.positions());
    let in_len = g.channels * g.h * g.w;
    let nb = chunk_len(kl, p, n);
    let mut cols = vec![0.0; kl * nb * p];
    let mut acc = vec![0.0; cout * nb * p];
    let mut out = vec![0.0f32; n * cout * p];
    for (imgs, dst) in x
        .data()
        .chunks(nb * in_len)
        .zip(out.chunks_mut(nb * cout * p))
    {
        let m = imgs.len() / in_len;
        let ld = m * p;
        for (s, img) in imgs.chunks_exact(in_len).enumerate() {
            im2col(img, &g, &mut cols[s * p..], ld);
        }
        let acc = &mut acc[..cout * ld];
        gemm(cout, kl, ld, &wf, false, &cols[..kl * ld], false, acc, false);
        for co in 0..cout {
            let bias = b.map_or(0.0, |b| b.data()[co] as f64);
            for s in 0..m {
                let src = &acc[co * ld + s * p..][..p];
                let o = &mut dst[(s * cout + co) * p..][..p];
                for (o, &v) in o.iter_mut().zip(src) {
                    *o = (v + bias) as f32;
                }
            }
        }
    }
    Ok(Tensor::from_parts(Shape(vec![n, cout, g.ho, g.wo]), out))
}

pub struct Conv2dGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients of [`conv2d`] given the upstream gradient `dy`. Input patches
/// are recomputed through `im2col` rather than saved from the forward pass.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Conv2dGrads> {
    let (n, cout, g) = conv_geom(x, w, stride, pad)?;
    if dy.dims() != [n, cout, g.ho, g.wo] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("upstream {:?}", dy.dims()),
        ));
    }
    let wf = to_f64(w.data());
    let (kl, p) = (g.patch_len(), g.positions());
    let in_len = g.channels * g.h * g.w;
    let nb = chunk_len(kl, p, n);
    let mut cols = vec![0.0; kl * nb * p];
    let mut dcols = vec![0.0; kl * nb * p];
    let mut dyf = vec![0.0; cout * nb * p];
    let mut dw = vec![0.0; cout * kl];
    let mut db = vec![0.0; cout];
    let mut dx = Vec::with_capacity(x.numel());
    let mut dimg = vec![0.0; in_len];
    for (imgs, dys) in x
        .data()
        .chunks(nb * in_len)
        .zip(dy.data().chunks(nb * cout * p))
    {
        let m = imgs.len() / in_len;
        let ld = m * p;
        // gather dY into [Cout, m * P] to match the column layout
        for s in 0..m {
            for co in 0..cout {
                let src = &dys[(s * cout + co) * p..][..p];
                let d = &mut dyf[co * ld + s * p..][..p];
                for (d, &v) in d.iter_mut().zip(src) {
                    *d = v as f64;
                }
            }
        }
        let dyf = &dyf[..cout * ld];
        for (acc, row) in db.iter_mut().zip(dyf.chunks_exact(ld)) {
            *acc += row.iter().sum::<f64>();
        }
        for (s, img) in imgs.chunks_exact(in_len).enumerate() {
            im2col(img, &g, &mut cols[s * p..], ld);
        }
        // dW += dY @ cols^T
        gemm(cout, ld, kl, dyf, false, &cols[..kl * ld], true, &mut dw, true);
        // dcols = W^T @ dY
        let dcols = &mut dcols[..kl * ld];
        gemm(kl, cout, ld, &wf, true, dyf, false, dcols, false);
        for s in 0..m {
            dimg.fill(0.0);
            col2im(&dcols[s * p..], &g, &mut dimg, ld);
            dx.extend(dimg.iter().map(|&v| v as f32));
        }
    }
    Ok(Conv2dGrads {
        input: Tensor::from_parts(x.shape().clone(), dx),
        weight: Tensor::from_parts(w.shape().clone(), to_f32(&dw)),
        bias: Tensor::from_parts(Shape(vec![cout]), to_f32(&db)),
    })
}

/// Flat input index of the maximum for every pooled output element.
#[derive(Debug, Clone)]
pub struct PoolIndices(pub(crate) Vec<u32>);

/// Max pooling with a `k x k` window. The window must tile the input exactly.
pub fn maxpool2d(x: &Tensor, k: usize, stride: usize) -> Result<(Tensor, PoolIndices)> {
    let [n, c, h, w] = nchw(x, "maxpool2d")?;
    let fits = |s: usize| s >= k && stride > 0 && (s - k).is_multiple_of(stride);
    if k == 0 || !fits(h) || !fits(w) {
        return Err(Error::shape(
            "maxpool2d",
            format!("window {k} stride {stride} does not tile {:?}", x.dims()),
        ));
    }
    let (ho, wo) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let data = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut idx = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                for dy in 0..k {
                    for dx in 0..k {
                        let i = base + (oy * stride + dy) * w + ox * stride + dx;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                }
                out.push(data[best]);
                idx.push(best as u32);
            }
        }
    }
    Ok((
        Tensor::from_parts(Shape(vec![n, c, ho, wo]), out),
        PoolIndices(idx),
    ))
}

pub fn maxpool2d_backward(input_shape: &Shape, indices: &PoolIndices, dy: &Tensor) -> Result<Tensor> {
    if dy.numel() != indices.0.len() {
        return Err(Error::shape(
            "maxpool2d_backward",
            format!("{} upstream values for {} windows", dy.numel(), indices.0.len()),
        ));
    }
    let mut dx = vec![0.0f32; input_shape.numel()];
    for (&i, &g) in indices.0.iter().zip(dy.data()) {
        dx[i as usize] += g;
    }
    Ok(Tensor::from_parts(input_shape.clone(), dx))
}

/// Nearest-neighbour 2x upsampling: every pixel becomes a 2x2 block.
pub fn upsample_nearest2x(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = nchw(x, "upsample_nearest2x")?;
    let out_shape = Shape::new(vec![n, c, 2 * h, 2 * w])?;
    let mut out = Vec::with_capacity(out_shape.numel());
    for row in x.data().chunks_exact(w) {
        for _ in 0..2 {
            for &v in row {
                out.push(v);
                out.push(v);
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Sums each 2x2 block of `dy` back onto its source pixel.
pub fn upsample_nearest2x_backward(dy: &Tensor) -> Result<Tensor> {
    let [n, c, h2, w2] = nchw(dy, "upsample_nearest2x_backward")?;
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(Error::shape(
            "upsample_nearest2x_backward",
            format!("odd spatial size {:?}", dy.dims()),
        ));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let d = dy.data();
    let mut out = vec![0.0f32; n * c * h * w];
    for plane in 0..n * c {
        let src = &d[plane * h2 * w2..(plane + 1) * h2 * w2];
        for y in 0..h {
            for x in 0..w {
                let t = 2 * y * w2 + 2 * x;
                out[plane * h * w + y * w + x] = src[t] + src[t + 1] + src[t + w2] + src[t + w2 + 1];
            }
        }
    }
    Ok(Tensor::from_parts(Shape(vec![n, c, h, w]), out))
}
