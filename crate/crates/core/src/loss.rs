//! Losses on the tape plus the plain-tensor metrics used for reporting.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use crate::autodiff::BCE_CLAMP;

/// Mean softmax cross-entropy of `logits: [N, K]` against class labels.
pub fn softmax_cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.softmax_cross_entropy(logits, labels)
}

/// Mean binary cross-entropy of probabilities against `{0, 1}` targets.
pub fn bce_loss(tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var> {
    tape.bce(pred, target)
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f32]) -> Vec<f32> {
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| (e / sum) as f32).collect()
}

/// Index of the largest value, first one on ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn rows<'a>(logits: &'a Tensor, labels: &[usize]) -> Result<std::slice::ChunksExact<'a, f32>> {
    match logits.dims() {
        &[n, k] if n == labels.len() => Ok(logits.data().chunks_exact(k)),
        d => Err(Error::shape(
            "accuracy",
            format!("logits {d:?} for {} labels", labels.len()),
        )),
    }
}

/// Number of rows whose argmax equals the label.
pub fn correct_count(logits: &Tensor, labels: &[usize]) -> Result<usize> {
    Ok(rows(logits, labels)?
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count())
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f32> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    Ok(correct_count(logits, labels)? as f32 / labels.len() as f32)
}

/// The `k` most probable classes of a logit row, descending by
/// probability, ties broken by the lower class index.
pub fn topk(row: &[f32], k: usize) -> Result<Vec<(usize, f32)>> {
    if k > row.len() {
        return Err(Error::shape(
            "topk",
            format!("k = {k} for {} classes", row.len()),
        ));
    }
    let probs = softmax(row);
    let mut order: Vec<usize> = (0..row.len()).collect();
    // stable sort keeps lower indices first among equal probabilities
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    Ok(order.into_iter().take(k).map(|c| (c, probs[c])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn uniform_logits_give_ln_k() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::full(&[4, 30], 0.3).unwrap(), true);
        let loss = softmax_cross_entropy(&mut tape, logits, &[0, 5, 29, 11]).unwrap();
        let v = tape.value(loss).unwrap().item().unwrap();
        assert!((v - 30f32.ln()).abs() < 1e-5, "{v}");
    }

    #[test]
    fn confident_correct_logit_gives_zero_loss() {
        let mut tape = Tape::new();
        let mut row = vec![0.0; 30];
        row[7] = 100.0;
        let logits = tape.constant(Tensor::new(vec![1, 30], row).unwrap());
        let loss = softmax_cross_entropy(&mut tape, logits, &[7]).unwrap();
        assert!(tape.value(loss).unwrap().item().unwrap() < 1e-6);
    }

    #[test]
    fn ce_gradient_is_softmax_minus_onehot() {
        let mut tape = Tape::new();
        let data = vec![0.5, -1.0, 2.0, 0.0, 0.1, 0.2];
        let logits = tape.leaf(Tensor::new(vec![2, 3], data.clone()).unwrap(), true);
        let loss = softmax_cross_entropy(&mut tape, logits, &[2, 0]).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(logits).unwrap().unwrap().data().to_vec();
        for (r, label) in [(0usize, 2usize), (1, 0)] {
            let p = softmax(&data[r * 3..r * 3 + 3]);
            for c in 0..3 {
                let want = (p[c] - if c == label { 1.0 } else { 0.0 }) / 2.0;
                assert!((g[r * 3 + c] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bad_label() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(&[1, 3]).unwrap());
        assert!(matches!(
            softmax_cross_entropy(&mut tape, logits, &[3]),
            Err(Error::BadLabel { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn bce_half_is_ln2() {
        for t in [0.0, 1.0] {
            let mut tape = Tape::new();
            let p = tape.constant(Tensor::full(&[5, 1], 0.5).unwrap());
            let loss = bce_loss(&mut tape, p, &Tensor::full(&[5, 1], t).unwrap()).unwrap();
            let v = tape.value(loss).unwrap().item().unwrap();
            assert!((v - std::f32::consts::LN_2).abs() < 1e-6);
        }
    }

    #[test]
    fn bce_perfect_prediction_is_near_zero() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        let loss = bce_loss(&mut tape, p, &Tensor::new(vec![2], vec![1.0, 0.0]).unwrap()).unwrap();
        let v = tape.value(loss).unwrap().item().unwrap();
        assert!((0.0..2e-6).contains(&v), "{v}");
    }

    #[test]
    fn bce_matches_scalar_formula() {
        let mut rng = Rng::new(11);
        let ps: Vec<f32> = (0..1000).map(|_| rng.range(0.001, 0.999)).collect();
        let ts: Vec<f32> = (0..1000).map(|_| (rng.uniform() < 0.5) as u8 as f32).collect();
        for (&p, &t) in ps.iter().zip(&ts) {
            let mut tape = Tape::new();
            let pv = tape.constant(Tensor::scalar(p));
            let loss = bce_loss(&mut tape, pv, &Tensor::scalar(t)).unwrap();
            let want = -(t as f64 * (p as f64).ln() + (1.0 - t as f64) * (1.0 - p as f64).ln());
            let got = tape.value(loss).unwrap().item().unwrap() as f64;
            assert!((got - want).abs() <= 1e-6 * want.max(1.0));
        }
        let mut tape = Tape::new();
        let pv = tape.constant(Tensor::new(vec![1000], ps).unwrap());
        assert!(bce_loss(&mut tape, pv, &Tensor::zeros(&[999]).unwrap()).is_err());
    }

    #[test]
    fn accuracy_and_topk() {
        let logits = Tensor::new(vec![2, 3], vec![0.1, 0.9, 0.0, 2.0, 1.0, 3.0]).unwrap();
        assert_eq!(accuracy(&logits, &[1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&logits, &[1, 0]).unwrap(), 0.5);

        let top = topk(&[0.0; 30], 3).unwrap();
        assert_eq!(top.iter().map(|t| t.0).collect::<Vec<_>>(), [0, 1, 2]);
        assert!(top.iter().all(|t| (t.1 - 1.0 / 30.0).abs() < 1e-7));

        let top = topk(&[1.0, 3.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(top.iter().map(|t| t.0).collect::<Vec<_>>(), [1, 3, 2]);
        assert!(topk(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn accuracy_matches_brute_force() {
        let mut rng = Rng::new(2);
        for _ in 0..20 {
            let (n, k) = (1 + rng.below(40), 2 + rng.below(10));
            let data: Vec<f32> = (0..n * k).map(|_| rng.normal()).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let logits = Tensor::new(vec![n, k], data.clone()).unwrap();
            let mut hits = 0;
            for i in 0..n {
                let row = &data[i * k..(i + 1) * k];
                let best = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                hits += (best == labels[i]) as usize;
            }
            assert_eq!(accuracy(&logits, &labels).unwrap(), hits as f32 / n as f32);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(8);
        for _ in 0..50 {
            let row: Vec<f32> = (0..30).map(|_| rng.normal() * 10.0).collect();
            let s: f64 = softmax(&row).iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
