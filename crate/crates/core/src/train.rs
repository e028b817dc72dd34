//! Classifier fine-tuning and adversarial training loops, plus metric logs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::Tape;
use crate::data::{batches, Dataset, Normalize};
use crate::error::{Error, Result};
use crate::loss::{argmax, bce_loss, softmax_cross_entropy};
use crate::models::{Arch, Model};
use crate::nn::Mode;
use crate::optim::{Adam, AdamConfig, Sgd, SgdConfig};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

/// Whether a per-epoch callback wants training to go on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

/// One row of a metrics CSV.
pub trait MetricRow {
    const HEADER: &'static str;
    fn render(&self) -> String;
}

impl MetricRow for EpochRecord {
    const HEADER: &'static str = "epoch,train_accuracy,loss,val_accuracy";
    fn render(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6}",
            self.epoch, self.train_accuracy, self.loss, self.val_accuracy
        )
    }
}

impl MetricRow for GanRecord {
    const HEADER: &'static str = "epoch,d_loss,g_loss";
    fn render(&self) -> String {
        format!("{},{:.6},{:.6}", self.epoch, self.d_loss, self.g_loss)
    }
}

pub fn metrics_csv<R: MetricRow>(records: &[R]) -> String {
    let mut out = String::new();
    writeln!(out, "{}", R::HEADER).expect("string write");
    for r in records {
        writeln!(out, "{}", r.render()).expect("string write");
    }
    out
}

pub fn write_metrics_csv<R: MetricRow>(records: &[R], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, metrics_csv(records)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub sgd: SgdConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 40,
            batch: 32,
            seed: 1,
            sgd: SgdConfig::default(),
        }
    }
}

/// Summary handed to the per-epoch callback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierProgress {
    pub record: EpochRecord,
    /// True when this epoch has the best validation accuracy so far
    /// (an equal later score does not replace an earlier best).
    pub is_best: bool,
}

fn nan_abort(what: &str, epoch: usize, step: usize, value: f64) -> Error {
    Error::NonFinite(format!(
        "{what} became {value} at epoch {epoch}, batch {step}; lower the learning rate or check the inputs"
    ))
}

fn ensure_recognizer(model: &Model, ds: &Dataset) -> Result<()> {
    match &model.arch {
        Arch::Recognizer(spec) if spec.head_classes == ds.num_classes() => Ok(()),
        Arch::Recognizer(spec) => Err(Error::InvalidConfig(format!(
            "model predicts {} classes, dataset has {}",
            spec.head_classes,
            ds.num_classes()
        ))),
        other => Err(Error::ArchMismatch {
            expected: "recognizer",
            found: other.tag(),
        }),
    }
}

/// Sum of per-row cross-entropies, computed in f64 from the logits.
fn ce_sum(logits: &Tensor, labels: &[usize]) -> f64 {
    let k = logits.dims()[1];
    logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .map(|(row, &l)| {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
            lse - row[l] as f64
        })
        .sum()
}

/// Eval-mode accuracy and mean cross-entropy. The model is not touched.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<(f64, f64)> {
    ensure_recognizer(model, ds)?;
    if ds.is_empty() {
        return Ok((0.0, 0.0));
    }
    let order: Vec<usize> = (0..ds.len()).collect();
    let (mut correct, mut loss) = (0usize, 0.0);
    for chunk in order.chunks(64) {
        let (x, labels) = ds.batch(chunk, Normalize::Unit);
        let logits = model.net.infer(&x)?;
        let k = logits.dims()[1];
        correct += logits
            .data()
            .chunks_exact(k)
            .zip(&labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
        loss += ce_sum(&logits, &labels);
    }
    Ok((correct as f64 / ds.len() as f64, loss / ds.len() as f64))
}

/// SGD training with softmax cross-entropy. After each epoch the model is
/// scored on `val` in eval mode and `on_epoch` sees the record; returning
/// `Control::Stop` ends training early.
pub fn train_classifier(
    model: &mut Model,
    train: &Dataset,
    val: &Dataset,
    cfg: &ClassifierConfig,
    mut on_epoch: impl FnMut(&Model, &ClassifierProgress) -> Result<Control>,
) -> Result<Vec<EpochRecord>> {
    ensure_recognizer(model, train)?;
    if train.class_names != val.class_names {
        return Err(Error::InvalidConfig("train and val class names differ".into()));
    }
    if train.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    let mut sgd = Sgd::new(cfg.sgd)?;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best = f64::NEG_INFINITY;
    for epoch in 1..=cfg.epochs {
        model.net.set_mode(Mode::Train);
        let (mut correct, mut loss_sum) = (0usize, 0.0f64);
        for (step, (x, labels)) in
            batches(train, cfg.batch, cfg.seed, epoch as u64, Normalize::Unit)?.enumerate()
        {
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let logits = model.net.forward(&mut tape, xv)?;
            let loss = softmax_cross_entropy(&mut tape, logits, &labels)?;
            let lv = tape.value(loss)?.item().expect("scalar loss") as f64;
            if !lv.is_finite() {
                return Err(nan_abort("training loss", epoch, step, lv));
            }
            let lt = tape.value(logits)?;
            let k = lt.dims()[1];
            correct += lt
                .data()
                .chunks_exact(k)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            loss_sum += lv * labels.len() as f64;
            tape.backward(loss)?;
            model.net.zero_grads();
            model.net.collect_grads(&tape)?;
            sgd.step(&mut model.net)?;
        }
        let (val_accuracy, _) = evaluate(model, val)?;
        let record = EpochRecord {
            epoch,
            train_accuracy: correct as f64 / train.len() as f64,
            loss: loss_sum / train.len() as f64,
            val_accuracy,
        };
        records.push(record);
        let is_best = val_accuracy > best;
        if is_best {
            best = val_accuracy;
        }
        if on_epoch(model, &ClassifierProgress { record, is_best })? == Control::Stop {
            break;
        }
    }
    model.net.set_mode(Mode::Eval);
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    /// Number of discriminator/generator update cycles; each consumes one
    /// batch from a reshuffled stream over the dataset.
    pub epochs: usize,
    pub batch: usize,
    pub latent_dim: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Probe samples are produced every `sample_every` epochs (0 = never).
    pub sample_every: usize,
    pub probe_count: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            epochs: 2000,
            batch: 32,
            latent_dim: 100,
            seed: 1,
            adam: AdamConfig::default(),
            sample_every: 500,
            probe_count: 64,
        }
    }
}

pub struct GanProgress<'a> {
    pub record: GanRecord,
    /// Generator output for the fixed probe latents, `[-1, 1]` range,
    /// present on sampling epochs.
    pub samples: Option<&'a Tensor>,
}

/// `n` standard normal latent rows.
pub fn latent_batch(rng: &mut Rng, n: usize, latent_dim: usize) -> Tensor {
    let data = (0..n * latent_dim).map(|_| rng.normal()).collect();
    Tensor::new(vec![n, latent_dim], data).expect("latent shape")
}

/// The fixed probe latents used for sample grids.
pub fn probe_latents(seed: u64, n: usize, latent_dim: usize) -> Tensor {
    latent_batch(&mut Rng::new(derive_seed(seed, 0x9B0B, 0)), n, latent_dim)
}

/// Eval-mode generator output for the given latents.
pub fn generate(g: &Model, z: &Tensor) -> Result<Tensor> {
    g.net.infer(z)
}

/// Endless stream of shuffled batches; each pass over the data reshuffles.
struct BatchStream<'a> {
    ds: &'a Dataset,
    batch: usize,
    seed: u64,
    pass: u64,
    queue: std::vec::IntoIter<(Tensor, Vec<usize>)>,
}

impl BatchStream<'_> {
    fn next_batch(&mut self) -> Result<Tensor> {
        loop {
            if let Some((x, _)) = self.queue.next() {
                return Ok(x);
            }
            self.queue = batches(self.ds, self.batch, self.seed, self.pass, Normalize::Symmetric)?
                .collect::<Vec<_>>()
                .into_iter();
            self.pass += 1;
        }
    }
}

fn check_gan(g: &Model, d: &Model, cfg: &GanConfig) -> Result<()> {
    match (&g.arch, &d.arch) {
        (Arch::Generator(gs), Arch::Discriminator(ds)) => {
            if gs.latent_dim != cfg.latent_dim {
                return Err(Error::InvalidConfig(format!(
                    "generator expects {} latent dims, config has {}",
                    gs.latent_dim, cfg.latent_dim
                )));
            }
            if (gs.channels, gs.img_size) != (ds.channels, ds.img_size) {
                return Err(Error::InvalidConfig("generator and discriminator image shapes differ".into()));
            }
            Ok(())
        }
        (Arch::Generator(_), other) => Err(Error::ArchMismatch {
            expected: "discriminator",
            found: other.tag(),
        }),
        (other, _) => Err(Error::ArchMismatch {
            expected: "generator",
            found: other.tag(),
        }),
    }
}

fn bce_value(tape: &Tape, v: crate::autodiff::Var) -> Result<f64> {
    Ok(tape.value(v)?.item().expect("scalar loss") as f64)
}

/// One discriminator step: real images scored against 1, detached fakes
/// against 0, Adam update of `d` only. Returns the summed loss.
pub fn discriminator_step(
    g: &mut Model,
    d: &mut Model,
    adam: &mut Adam,
    real: Tensor,
    z: Tensor,
) -> Result<f64> {
    let n = real.dims()[0];
    let mut tape = Tape::new();
    let zv = tape.constant(z);
    let fake = g.net.forward_with(&mut tape, zv, false)?;
    let fake = tape.value(fake)?.clone();

    d.net.zero_grads();
    let mut total = 0.0;
    for (x, target) in [(real, 1.0), (fake, 0.0)] {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let score = d.net.forward(&mut tape, xv)?;
        let loss = bce_loss(&mut tape, score, &Tensor::full(&[n, 1], target)?)?;
        total += bce_value(&tape, loss)?;
        tape.backward(loss)?;
        d.net.collect_grads(&tape)?;
    }
    adam.step(&mut d.net)?;
    Ok(total)
}

/// One generator step: fresh fakes scored by `d` against 1, Adam update of
/// `g` only.
pub fn generator_step(g: &mut Model, d: &mut Model, adam: &mut Adam, z: Tensor) -> Result<f64> {
    let n = z.dims()[0];
    let mut tape = Tape::new();
    let zv = tape.constant(z);
    let fake = g.net.forward(&mut tape, zv)?;
    let score = d.net.forward_with(&mut tape, fake, false)?;
    let loss = bce_loss(&mut tape, score, &Tensor::full(&[n, 1], 1.0)?)?;
    let lv = bce_value(&tape, loss)?;
    tape.backward(loss)?;
    g.net.zero_grads();
    g.net.collect_grads(&tape)?;
    adam.step(&mut g.net)?;
    Ok(lv)
}

/// Adversarial training. `ds` holds `[0, 1]` images and is fed to the
/// discriminator as `[-1, 1]`.
pub fn train_gan(
    g: &mut Model,
    d: &mut Model,
    ds: &Dataset,
    cfg: &GanConfig,
    mut on_epoch: impl FnMut(&Model, &Model, &GanProgress) -> Result<Control>,
) -> Result<Vec<GanRecord>> {
    check_gan(g, d, cfg)?;
    if ds.is_empty() || cfg.batch == 0 {
        return Err(Error::InvalidConfig("GAN training needs data and a positive batch".into()));
    }
    let mut adam_d = Adam::new(cfg.adam)?;
    let mut adam_g = Adam::new(cfg.adam)?;
    let probe = probe_latents(cfg.seed, cfg.probe_count, cfg.latent_dim);
    let mut stream = BatchStream {
        ds,
        batch: cfg.batch,
        seed: cfg.seed,
        pass: 0,
        queue: Vec::new().into_iter(),
    };
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        g.net.set_mode(Mode::Train);
        d.net.set_mode(Mode::Train);
        let real = stream.next_batch()?;
        let n = real.dims()[0];
        let mut zr = Rng::new(derive_seed(cfg.seed, 0x1A7E, epoch as u64));
        let z_d = latent_batch(&mut zr, n, cfg.latent_dim);
        let z_g = latent_batch(&mut zr, n, cfg.latent_dim);

        let d_loss = discriminator_step(g, d, &mut adam_d, real, z_d)?;
        if !d_loss.is_finite() {
            return Err(nan_abort("discriminator loss", epoch, 0, d_loss));
        }
        let g_loss = generator_step(g, d, &mut adam_g, z_g)?;
        if !g_loss.is_finite() {
            return Err(nan_abort("generator loss", epoch, 0, g_loss));
        }
        let record = GanRecord { epoch, d_loss, g_loss };
        records.push(record);

        let samples = if cfg.sample_every > 0 && epoch % cfg.sample_every == 0 {
            Some(generate(g, &probe)?)
        } else {
            None
        };
        let progress = GanProgress {
            record,
            samples: samples.as_ref(),
        };
        if on_epoch(g, d, &progress)? == Control::Stop {
            break;
        }
    }
    g.net.set_mode(Mode::Eval);
    d.net.set_mode(Mode::Eval);
    Ok(records)
}

/// Mean over pixels of the standard deviation across samples, after
/// mapping `[-1, 1]` outputs to `[0, 1]`. Zero means every sample is the
/// same image.
pub fn sample_diversity(samples: &Tensor) -> f64 {
    let n = samples.dims()[0];
    let px = samples.numel() / n.max(1);
    if n < 2 {
        return 0.0;
    }
    let data = samples.data();
    let mut total = 0.0;
    for p in 0..px {
        let vals = (0..n).map(|i| Normalize::Symmetric.invert(data[i * px + p]) as f64);
        let mean = vals.clone().sum::<f64>() / n as f64;
        let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        total += var.sqrt();
    }
    total / px as f64
}
