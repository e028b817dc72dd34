//! Independent reference implementations used by the integration and
//! acceptance tests: central finite differences and a direct-loop
//! convolution.
#![allow(dead_code)]

use laif_core::autodiff::{Tape, Unary};
use laif_core::nn::{Layer, Mode, Sequential};
use laif_core::rng::Rng;
use laif_core::Tensor;

pub const FD_EPS: f32 = 1e-3;
pub const FD_TOL: f64 = 1e-3;

/// `||a - n|| / max(||a||, ||n||)` in the Euclidean norm.
pub fn rel_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (&a, &n) in analytic.iter().zip(numeric) {
        diff += (a as f64 - n).powi(2);
        na += (a as f64).powi(2);
        nn += n * n;
    }
    let denom = na.sqrt().max(nn.sqrt());
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

/// Central difference of `f` with respect to every element of `x`.
pub fn numeric_grad(x: &mut [f32], mut f: impl FnMut(&[f32]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_EPS;
            let up = f(x);
            x[i] = orig - FD_EPS;
            let down = f(x);
            x[i] = orig;
            // the step actually taken after f32 rounding
            let h = ((orig + FD_EPS) as f64) - ((orig - FD_EPS) as f64);
            (up - down) / h
        })
        .collect()
}

/// How test inputs are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    /// Uniform in `[-1, 1)`.
    Smooth,
    /// Magnitude in `[0.05, 1.5)` with a random sign, clear of the kink at 0.
    AwayFromZero,
    /// A shuffled ladder with 0.01 spacing so no two values tie within 2 eps.
    Distinct,
}

pub fn random_input(rng: &mut Rng, dims: &[usize], kind: InputKind) -> Tensor {
    let n: usize = dims.iter().product();
    let data = match kind {
        InputKind::Smooth => (0..n).map(|_| rng.range(-1.0, 1.0)).collect(),
        InputKind::AwayFromZero => (0..n)
            .map(|_| {
                let m = rng.range(0.05, 1.5);
                if rng.uniform() < 0.5 {
                    -m
                } else {
                    m
                }
            })
            .collect(),
        InputKind::Distinct => {
            let mut idx: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut idx);
            idx.into_iter().map(|i| i as f32 * 0.01 - n as f32 * 0.005).collect()
        }
    };
    Tensor::new(dims.to_vec(), data).unwrap()
}

/// A single-layer gradient check case.
pub struct LayerCase {
    pub name: String,
    pub layer: Layer,
    pub input_dims: Vec<usize>,
    pub mode: Mode,
    pub input: InputKind,
}

const NET_SEED: u64 = 77;

fn projected(net: &mut Sequential, x: &Tensor, w: &[f32]) -> f64 {
    net.reseed(NET_SEED);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), false);
    let y = net.forward_with(&mut tape, xv, false).unwrap();
    tape.value(y)
        .unwrap()
        .data()
        .iter()
        .zip(w)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

/// Relative error of the full gradient of `sum(w * layer(x))`, for a random
/// projection `w`, with respect to the input and every parameter taken as
/// one vector.
pub fn check_layer(case: &LayerCase, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut net = Sequential::new(vec![case.layer.clone()], &case.input_dims[1..], NET_SEED).unwrap();
    net.set_mode(case.mode);
    let mut rebind = Rng::new(seed ^ 0xABCD);
    for (_, p) in net.named_params_mut() {
        for v in p.value.data_mut() {
            *v = match p.role {
                laif_core::nn::ParamRole::Norm if v.abs() > 0.5 => rebind.range(0.5, 1.5),
                _ => rebind.range(-1.0, 1.0),
            };
        }
    }
    for layer in net.layers_mut() {
        for (name, b) in layer.buffers_mut() {
            for v in b.data_mut() {
                *v = if name == "running_var" {
                    rebind.range(0.3, 2.0)
                } else {
                    rebind.range(-0.5, 0.5)
                };
            }
        }
    }
    let x = random_input(&mut rng, &case.input_dims, case.input);
    let out_dims = net.output_dims(case.input_dims[0]).unwrap();
    let w = random_input(&mut rng, &out_dims, InputKind::Smooth);

    // analytic
    net.reseed(NET_SEED);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let y = net.forward(&mut tape, xv).unwrap();
    let wv = tape.constant(w.clone());
    let prod = tape.mul(y, wv).unwrap();
    let s = tape.sum(prod).unwrap();
    tape.backward(s).unwrap();
    let dx = tape.grad(xv).unwrap().unwrap().clone();
    net.zero_grads();
    net.collect_grads(&tape).unwrap();
    let param_grads: Vec<Tensor> = net
        .named_params()
        .iter()
        .map(|(n, p)| p.grad.clone().unwrap_or_else(|| panic!("{n} has no grad")))
        .collect();

    // numeric, input
    let mut analytic: Vec<f32> = dx.data().to_vec();
    let mut numeric: Vec<f64> = Vec::new();
    let mut xd = x.data().to_vec();
    let dims = x.dims().to_vec();
    let num = numeric_grad(&mut xd, |v| {
        projected(&mut net, &Tensor::new(dims.clone(), v.to_vec()).unwrap(), w.data())
    });
    numeric.extend(num);

    // numeric, parameters
    for (pi, g) in param_grads.iter().enumerate() {
        let mut values = net.named_params()[pi].1.value.data().to_vec();
        let num = numeric_grad(&mut values, |v| {
            net.named_params_mut()[pi].1.value.data_mut().copy_from_slice(v);
            projected(&mut net, &x, w.data())
        });
        net.named_params_mut()[pi]
            .1
            .value
            .data_mut()
            .copy_from_slice(&values);
        analytic.extend_from_slice(g.data());
        numeric.extend(num);
    }
    rel_error(&analytic, &numeric)
}

/// Every layer type in its gradient-bearing configurations.
pub fn layer_cases(rng: &mut Rng) -> Vec<LayerCase> {
    let mut cases = Vec::new();
    let mut add = |name: &str, layer: Layer, dims: Vec<usize>, mode: Mode, input: InputKind| {
        cases.push(LayerCase {
            name: name.into(),
            layer,
            input_dims: dims,
            mode,
            input,
        })
    };
    let (n, i, o) = (1 + rng.below(3), 1 + rng.below(5), 1 + rng.below(5));
    add("dense", Layer::dense(i, o, rng).unwrap(), vec![n, i], Mode::Train, InputKind::Smooth);
    for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (3, 1, 0)] {
        let (ci, co) = (1 + rng.below(3), 1 + rng.below(3));
        let hw = 4 + rng.below(3);
        add(
            &format!("conv2d k{k} s{stride} p{pad}"),
            Layer::conv2d(ci, co, k, stride, pad, rng).unwrap(),
            vec![1 + rng.below(2), ci, hw, hw],
            Mode::Train,
            InputKind::Smooth,
        );
    }
    let c = 1 + rng.below(3);
    for mode in [Mode::Train, Mode::Eval] {
        add(
            &format!("batchnorm2d {mode:?}"),
            Layer::batch_norm2d(c, 0.8).unwrap(),
            vec![2 + rng.below(2), c, 3, 3],
            mode,
            InputKind::Smooth,
        );
    }
    add(
        "batchnorm1d Train",
        Layer::batch_norm2d(c, 0.8).unwrap(),
        vec![3 + rng.below(3), c],
        Mode::Train,
        InputKind::Smooth,
    );
    let act_dims = vec![2, 3, 2, 2];
    add("relu", Layer::Activation(Unary::Relu), act_dims.clone(), Mode::Train, InputKind::AwayFromZero);
    add("leaky_relu", Layer::leaky_relu(0.2), act_dims.clone(), Mode::Train, InputKind::AwayFromZero);
    add("tanh", Layer::Activation(Unary::Tanh), act_dims.clone(), Mode::Train, InputKind::Smooth);
    add("sigmoid", Layer::Activation(Unary::Sigmoid), act_dims.clone(), Mode::Train, InputKind::Smooth);
    add("dropout2d", Layer::dropout2d(0.25).unwrap(), vec![3, 4, 2, 2], Mode::Train, InputKind::Smooth);
    add("upsample2x", Layer::Upsample2x, vec![2, 2, 3, 3], Mode::Train, InputKind::Smooth);
    add("maxpool2d", Layer::MaxPool2d, vec![2, 2, 4, 4], Mode::Train, InputKind::Distinct);
    add("flatten", Layer::Flatten, vec![2, 2, 3, 3], Mode::Train, InputKind::Smooth);
    add("reshape", Layer::Reshape(vec![2, 2, 2]), vec![2, 8], Mode::Train, InputKind::Smooth);
    cases
}

/// Worst relative error of the softmax cross-entropy logit gradient.
pub fn check_softmax_ce(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let (n, k) = (1 + rng.below(4), 2 + rng.below(8));
    let logits = random_input(&mut rng, &[n, k], InputKind::Smooth).map(|v| 2.0 * v);
    let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
    let loss_of = |t: Tensor| {
        let mut tape = Tape::new();
        let v = tape.leaf(t, true);
        let l = tape.softmax_cross_entropy(v, &labels).unwrap();
        (tape, v, l)
    };
    let (mut tape, v, l) = loss_of(logits.clone());
    tape.backward(l).unwrap();
    let g = tape.grad(v).unwrap().unwrap().clone();
    let mut xd = logits.data().to_vec();
    let num = numeric_grad(&mut xd, |x| {
        let (tape, _, l) = loss_of(Tensor::new(vec![n, k], x.to_vec()).unwrap());
        tape.value(l).unwrap().item().unwrap() as f64
    });
    rel_error(g.data(), &num)
}

/// Worst relative error of the BCE probability gradient.
pub fn check_bce(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let n = 1 + rng.below(6);
    let p: Vec<f32> = (0..n).map(|_| rng.range(0.05, 0.95)).collect();
    let t: Vec<f32> = (0..n).map(|_| (rng.uniform() < 0.5) as u8 as f32).collect();
    let target = Tensor::new(vec![n, 1], t).unwrap();
    let loss_of = |x: Vec<f32>| {
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::new(vec![n, 1], x).unwrap(), true);
        let l = tape.bce(v, &target).unwrap();
        (tape, v, l)
    };
    let (mut tape, v, l) = loss_of(p.clone());
    tape.backward(l).unwrap();
    let g = tape.grad(v).unwrap().unwrap().clone();
    let mut xd = p;
    let num = numeric_grad(&mut xd, |x| {
        let (tape, _, l) = loss_of(x.to_vec());
        tape.value(l).unwrap().item().unwrap() as f64
    });
    rel_error(g.data(), &num)
}

/// Result of a gradient sweep: the worst case and its label.
pub struct GradSweep {
    pub worst: f64,
    pub worst_case: String,
    pub checks: usize,
}

/// Runs every layer case and both losses over `seeds` instances each.
pub fn gradient_sweep(seeds: u64) -> GradSweep {
    let mut sweep = GradSweep {
        worst: 0.0,
        worst_case: String::new(),
        checks: 0,
    };
    let mut note = |err: f64, label: String| {
        sweep.checks += 1;
        if err > sweep.worst || err.is_nan() {
            sweep.worst = err;
            sweep.worst_case = label;
        }
    };
    for seed in 0..seeds {
        let mut rng = Rng::new(1000 + seed);
        for case in layer_cases(&mut rng) {
            let err = check_layer(&case, seed);
            note(err, format!("{} (seed {seed})", case.name));
        }
        note(check_softmax_ce(seed), format!("softmax_ce (seed {seed})"));
        note(check_bce(seed), format!("bce (seed {seed})"));
    }
    sweep
}

/// Direct convolution in f64: `y[n,o,i,j] = b[o] + sum x[n,c,i*s+u-p,j*s+v-p] w[o,c,u,v]`.
pub struct NaiveConv {
    pub y: Vec<f64>,
    pub dx: Vec<f64>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
    pub out_hw: (usize, usize),
}

#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f32],
    [n, ci, h, w]: [usize; 4],
    wt: &[f32],
    [co, k]: [usize; 2],
    b: &[f32],
    dy: &[f32],
    stride: usize,
    pad: usize,
) -> Option<NaiveConv> {
    if h + 2 * pad < k || w + 2 * pad < k {
        return None;
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let xi = |a, c, y, z| ((a * ci + c) * h + y) * w + z;
    let wi = |o, c, u, v| ((o * ci + c) * k + u) * k + v;
    let yi = |a, o, i, j| ((a * co + o) * ho + i) * wo + j;
    let mut out = NaiveConv {
        y: vec![0.0; n * co * ho * wo],
        dx: vec![0.0; x.len()],
        dw: vec![0.0; wt.len()],
        db: vec![0.0; co],
        out_hw: (ho, wo),
    };
    for a in 0..n {
        for o in 0..co {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b[o] as f64;
                    let g = dy[yi(a, o, i, j)] as f64;
                    out.db[o] += g;
                    for c in 0..ci {
                        for u in 0..k {
                            for v in 0..k {
                                let (r, s) = (i * stride + u, j * stride + v);
                                if r < pad || s < pad || r - pad >= h || s - pad >= w {
                                    continue;
                                }
                                let (r, s) = (r - pad, s - pad);
                                acc += x[xi(a, c, r, s)] as f64 * wt[wi(o, c, u, v)] as f64;
                                out.dx[xi(a, c, r, s)] += g * wt[wi(o, c, u, v)] as f64;
                                out.dw[wi(o, c, u, v)] += g * x[xi(a, c, r, s)] as f64;
                            }
                        }
                    }
                    out.y[yi(a, o, i, j)] = acc;
                }
            }
        }
    }
    Some(out)
}

pub struct ConvSweep {
    pub shapes: usize,
    pub rejected: usize,
    pub max_delta: f64,
    pub worst: String,
}

/// Compares `conv2d` and `conv2d_backward` with [`naive_conv`] on every
/// shape with `N, Cin, Cout <= 4`, `H, W <= 9`, `k in {1, 3}`,
/// `stride in {1, 2}`, `pad in {0, 1}`.
pub fn conv_sweep() -> ConvSweep {
    use laif_core::tensor::{conv2d, conv2d_backward};
    let mut sweep = ConvSweep {
        shapes: 0,
        rejected: 0,
        max_delta: 0.0,
        worst: String::new(),
    };
    let mut rng = Rng::new(2024);
    for n in 1..=4 {
        for ci in 1..=4 {
            for co in 1..=4 {
                for h in 1..=9 {
                    for w in 1..=9 {
                        for k in [1, 3] {
                            for stride in [1, 2] {
                                for pad in [0, 1] {
                                    let xt = random_input(&mut rng, &[n, ci, h, w], InputKind::Smooth);
                                    let wt = random_input(&mut rng, &[co, ci, k, k], InputKind::Smooth);
                                    let bt = random_input(&mut rng, &[co], InputKind::Smooth);
                                    let label = format!("n{n} ci{ci} co{co} {h}x{w} k{k} s{stride} p{pad}");
                                    let fast = conv2d(&xt, &wt, Some(&bt), stride, pad);
                                    if h + 2 * pad < k || w + 2 * pad < k {
                                        assert!(fast.is_err(), "{label}: expected rejection");
                                        sweep.rejected += 1;
                                        continue;
                                    }
                                    let ho = (h + 2 * pad - k) / stride + 1;
                                    let wo = (w + 2 * pad - k) / stride + 1;
                                    let dy = random_input(&mut rng, &[n, co, ho, wo], InputKind::Smooth);
                                    let slow = naive_conv(
                                        xt.data(),
                                        [n, ci, h, w],
                                        wt.data(),
                                        [co, k],
                                        bt.data(),
                                        dy.data(),
                                        stride,
                                        pad,
                                    )
                                    .expect("valid shape");
                                    let y = fast.unwrap();
                                    assert_eq!(y.dims(), &[n, co, ho, wo], "{label}");
                                    let grads = conv2d_backward(&xt, &wt, &dy, stride, pad).unwrap();
                                    for (got, want) in [
                                        (y.data(), &slow.y),
                                        (grads.input.data(), &slow.dx),
                                        (grads.weight.data(), &slow.dw),
                                        (grads.bias.data(), &slow.db),
                                    ] {
                                        for (&g, &r) in got.iter().zip(want.iter()) {
                                            let d = (g as f64 - r).abs();
                                            if d > sweep.max_delta {
                                                sweep.max_delta = d;
                                                sweep.worst = label.clone();
                                            }
                                        }
                                    }
                                    sweep.shapes += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    sweep
}
