use laif_core::checkpoint::Checkpoint;
use laif_core::data::{grid_image, synth_glyphs, Normalize};
use laif_core::loss::{softmax, topk};
use laif_core::models::{build_recognizer, RecognizerSpec};
use laif_core::nn::Mode;
use laif_core::optim::{Sgd, SgdConfig};
use laif_core::tensor::ReduceOp;
use laif_core::{Tape, Tensor};
use proptest::prelude::*;

fn tensor(dims: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = dims.iter().product();
    prop::collection::vec(-10.0f32..10.0, n).prop_map(move |d| Tensor::new(dims.clone(), d).unwrap())
}

fn dims() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, 1..=4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn add_commutes_and_sub_inverts((a, b) in dims().prop_flat_map(|d| (tensor(d.clone()), tensor(d)))) {
        prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
        let back = a.add(&b).unwrap().sub(&b).unwrap();
        for (x, y) in back.data().iter().zip(a.data()) {
            prop_assert!((x - y).abs() <= 1e-5 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn matmul_matches_loops(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        let mut rng = laif_core::rng::Rng::new(seed);
        let a: Vec<f32> = (0..m * k).map(|_| rng.normal()).collect();
        let b: Vec<f32> = (0..k * n).map(|_| rng.normal()).collect();
        let c = Tensor::new(vec![m, k], a.clone()).unwrap()
            .matmul(&Tensor::new(vec![k, n], b.clone()).unwrap()).unwrap();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] as f64 * b[p * n + j] as f64).sum();
                prop_assert!((c.data()[i * n + j] as f64 - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn reshape_keeps_data(t in dims().prop_flat_map(tensor)) {
        let flat = t.reshape(&[t.numel()]).unwrap();
        prop_assert_eq!(flat.data(), t.data());
        prop_assert!(t.reshape(&[t.numel() + 1]).is_err());
    }

    #[test]
    fn reduce_sum_matches_total(t in dims().prop_flat_map(tensor)) {
        let axes: Vec<usize> = (0..t.dims().len()).collect();
        let s = t.reduce(ReduceOp::Sum, &axes).unwrap().item().unwrap() as f64;
        let want: f64 = t.data().iter().map(|&v| v as f64).sum();
        prop_assert!((s - want).abs() < 1e-3);
        let mx = t.reduce(ReduceOp::Max, &axes).unwrap().item().unwrap();
        prop_assert_eq!(mx, t.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max));
    }

    #[test]
    fn gradient_of_sum_is_ones(t in dims().prop_flat_map(tensor)) {
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone(), true);
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        prop_assert_eq!(tape.grad(x).unwrap().unwrap(), &t.full_like(1.0));
    }

    #[test]
    fn gradient_is_linear_in_the_loss(t in dims().prop_flat_map(tensor)) {
        // d(3x * x)/dx == 6x
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone(), true);
        let three = tape.constant(t.full_like(3.0));
        let x3 = tape.mul(x, three).unwrap();
        let sq = tape.mul(x3, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        for (g, v) in tape.grad(x).unwrap().unwrap().data().iter().zip(t.data()) {
            prop_assert!((g - 6.0 * v).abs() <= 1e-4 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn softmax_is_a_distribution(row in prop::collection::vec(-50.0f32..50.0, 1..40)) {
        let p = softmax(&row);
        let s: f64 = p.iter().map(|&v| v as f64).sum();
        prop_assert!((s - 1.0).abs() < 1e-5);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let top = topk(&row, row.len().min(3)).unwrap();
        prop_assert!(top.windows(2).all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
    }

    #[test]
    fn grid_interior_maps_to_source(k in 1usize..7, cols in 1usize..4, seed in any::<u64>()) {
        let mut rng = laif_core::rng::Rng::new(seed);
        let (h, w) = (3, 4);
        let data: Vec<f32> = (0..k * h * w).map(|_| rng.range(-1.0, 1.0)).collect();
        let imgs = Tensor::new(vec![k, 1, h, w], data.clone()).unwrap();
        let g = grid_image(&imgs, cols, Normalize::Symmetric).unwrap();
        let rows = k.div_ceil(cols);
        let gw = cols * w + (cols + 1) * 2;
        prop_assert_eq!(g.dims(), &[1, rows * h + (rows + 1) * 2, gw][..]);
        for i in 0..k {
            let (r, c) = (i / cols, i % cols);
            for y in 0..h {
                for x in 0..w {
                    let got = g.data()[(2 + r * (h + 2) + y) * gw + 2 + c * (w + 2) + x];
                    prop_assert_eq!(got, (data[(i * h + y) * w + x] + 1.0) / 2.0);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_roundtrip_is_bitwise(seed in any::<u64>(), classes in 2usize..31) {
        let m = build_recognizer(&RecognizerSpec::desk(classes), seed).unwrap();
        let names: Vec<String> = (0..classes).map(|c| format!("c{c:02}")).collect();
        let bytes = Checkpoint::from_model(&m, &names).encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(back.encode(), bytes);
        let m2 = back.into_model().unwrap();
        prop_assert_eq!(m2.net.state(), m.net.state());
    }

    #[test]
    fn zero_lr_step_is_identity(seed in any::<u64>()) {
        let mut m = build_recognizer(&RecognizerSpec::desk(4), seed).unwrap();
        m.net.set_mode(Mode::Train);
        let ds = synth_glyphs(seed, 1, 4).unwrap();
        let (x, labels) = ds.batch(&[0, 1, 2, 3], Normalize::Unit);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = m.net.forward(&mut tape, xv).unwrap();
        let loss = tape.softmax_cross_entropy(y, &labels).unwrap();
        tape.backward(loss).unwrap();
        m.net.collect_grads(&tape).unwrap();
        let before = m.net.state();
        let mut sgd = Sgd::new(SgdConfig { lr: 0.0, ..SgdConfig::default() }).unwrap();
        sgd.step(&mut m.net).unwrap();
        prop_assert_eq!(m.net.state(), before);
    }
}
