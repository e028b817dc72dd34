//! Concrete architectures: a VGG-style recognizer with a swappable dense
//! head, and the DCGAN-style generator and discriminator.

use std::fmt;

use crate::autodiff::Unary;
use crate::error::{Error, Result};
use crate::nn::{Layer, Sequential, BN_DEFAULT_MOMENTUM, BN_MOMENTUM};
use crate::rng::{derive_seed, Rng};

pub const LEAKY_SLOPE: f32 = 0.2;
pub const DISC_DROPOUT: f32 = 0.25;
/// Channel progression of the discriminator's strided blocks.
pub const DISC_BLOCKS: [(usize, usize); 4] = [(8, 16), (16, 32), (32, 64), (64, 128)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanItem {
    Conv(usize),
    Pool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecognizerSpec {
    pub in_channels: usize,
    pub img_size: usize,
    pub plan: Vec<PlanItem>,
    /// Widths of the dense layers between the conv stack and the head.
    pub hidden: Vec<usize>,
    pub head_classes: usize,
}

impl RecognizerSpec {
    /// Small plan that trains in minutes on a CPU.
    pub fn desk(head_classes: usize) -> Self {
        use PlanItem::*;
        RecognizerSpec {
            in_channels: 1,
            img_size: 32,
            plan: vec![Conv(16), Conv(16), Pool, Conv(32), Conv(32), Pool, Conv(64), Pool],
            hidden: vec![256],
            head_classes,
        }
    }

    /// VGG19's 16-conv layout with a 1-channel stem and classifier widths
    /// sized for a 32x32 input (1x1x512 after the fifth pool).
    pub fn vgg19(head_classes: usize) -> Self {
        use PlanItem::*;
        let mut plan = Vec::new();
        for (width, reps) in [(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)] {
            plan.extend(std::iter::repeat_n(Conv(width), reps));
            plan.push(Pool);
        }
        RecognizerSpec {
            in_channels: 1,
            img_size: 32,
            plan,
            hidden: vec![512, 512],
            head_classes,
        }
    }

    pub fn conv_layers(&self) -> usize {
        self.plan.iter().filter(|p| matches!(p, PlanItem::Conv(_))).count()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidPlan(m.to_string()));
        if self.head_classes < 2 {
            return bad("head needs at least 2 classes");
        }
        if self.conv_layers() == 0 {
            return bad("plan has no convolutions");
        }
        if self.in_channels == 0 || self.plan.contains(&PlanItem::Conv(0)) || self.hidden.contains(&0) {
            return bad("zero width");
        }
        let pools = self.plan.iter().filter(|p| **p == PlanItem::Pool).count();
        if self.img_size == 0 || !self.img_size.is_multiple_of(1 << pools) {
            return bad("pooling does not divide the image size");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GanSpec {
    pub latent_dim: usize,
    pub channels: usize,
    pub img_size: usize,
    /// Generator feature width after the projection (128 in the reference
    /// stack); the second conv emits `width / 2`.
    pub width: usize,
}

impl Default for GanSpec {
    fn default() -> Self {
        GanSpec {
            latent_dim: 100,
            channels: 1,
            img_size: 32,
            width: 128,
        }
    }
}

impl GanSpec {
    pub fn validate(&self) -> Result<()> {
        if self.img_size == 0 || !self.img_size.is_multiple_of(16) {
            return Err(Error::InvalidSpec(format!(
                "image size {} must be a multiple of 16",
                self.img_size
            )));
        }
        if self.latent_dim == 0 || self.channels == 0 || self.width < 2 || !self.width.is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arch {
    Recognizer(RecognizerSpec),
    Generator(GanSpec),
    Discriminator(GanSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    Recognizer,
    Generator,
    Discriminator,
}

impl ArchKind {
    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Recognizer => "recognizer",
            ArchKind::Generator => "generator",
            ArchKind::Discriminator => "discriminator",
        }
    }
}

impl Arch {
    pub fn kind(&self) -> ArchKind {
        match self {
            Arch::Recognizer(_) => ArchKind::Recognizer,
            Arch::Generator(_) => ArchKind::Generator,
            Arch::Discriminator(_) => ArchKind::Discriminator,
        }
    }

    /// Self-describing tag, e.g.
    /// `recognizer in=1 size=32 plan=16,16,M hidden=256 classes=30`.
    pub fn tag(&self) -> String {
        self.to_string()
    }

    pub fn parse_tag(tag: &str) -> Result<Arch> {
        let bad = || Error::InvalidSpec(format!("unparseable architecture tag '{tag}'"));
        let mut words = tag.split_whitespace();
        let kind = words.next().ok_or_else(bad)?;
        let mut fields = std::collections::BTreeMap::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(bad)?;
            fields.insert(k, v);
        }
        let num = |k: &str| -> Result<usize> {
            fields.get(k).ok_or_else(bad)?.parse().map_err(|_| bad())
        };
        let list = |k: &str| -> Result<Vec<&str>> {
            let v = *fields.get(k).ok_or_else(bad)?;
            Ok(if v == "-" { Vec::new() } else { v.split(',').collect() })
        };
        match kind {
            "recognizer" => {
                let plan = list("plan")?
                    .into_iter()
                    .map(|p| match p {
                        "M" => Ok(PlanItem::Pool),
                        n => n.parse().map(PlanItem::Conv).map_err(|_| bad()),
                    })
                    .collect::<Result<_>>()?;
                let hidden = list("hidden")?
                    .into_iter()
                    .map(|h| h.parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?;
                Ok(Arch::Recognizer(RecognizerSpec {
                    in_channels: num("in")?,
                    img_size: num("size")?,
                    plan,
                    hidden,
                    head_classes: num("classes")?,
                }))
            }
            "generator" => Ok(Arch::Generator(GanSpec {
                latent_dim: num("latent")?,
                channels: num("channels")?,
                img_size: num("size")?,
                width: num("width")?,
            })),
            "discriminator" => Ok(Arch::Discriminator(GanSpec {
                latent_dim: num("latent")?,
                channels: num("channels")?,
                img_size: num("size")?,
                width: num("width")?,
            })),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |xs: Vec<String>| if xs.is_empty() { "-".to_string() } else { xs.join(",") };
        match self {
            Arch::Recognizer(s) => {
                let plan = s
                    .plan
                    .iter()
                    .map(|p| match p {
                        PlanItem::Conv(n) => n.to_string(),
                        PlanItem::Pool => "M".to_string(),
                    })
                    .collect();
                write!(
                    f,
                    "recognizer in={} size={} plan={} hidden={} classes={}",
                    s.in_channels,
                    s.img_size,
                    join(plan),
                    join(s.hidden.iter().map(|h| h.to_string()).collect()),
                    s.head_classes
                )
            }
            Arch::Generator(g) | Arch::Discriminator(g) => write!(
                f,
                "{} latent={} channels={} size={} width={}",
                self.kind().name(),
                g.latent_dim,
                g.channels,
                g.img_size,
                g.width
            ),
        }
    }
}

/// An architecture together with its layers.
#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Arch,
    pub net: Sequential,
}

impl Model {
    /// Rebuilds a fresh model for `arch`.
    pub fn build(arch: &Arch, seed: u64) -> Result<Model> {
        match arch {
            Arch::Recognizer(s) => build_recognizer(s, seed),
            Arch::Generator(s) => build_generator(s, seed),
            Arch::Discriminator(s) => build_discriminator(s, seed),
        }
    }
}

fn dropout_seed(seed: u64) -> u64 {
    derive_seed(seed, 0xD0, 0)
}

pub fn build_recognizer(spec: &RecognizerSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = Rng::new(seed);
    let mut layers = Vec::new();
    let mut channels = spec.in_channels;
    let mut size = spec.img_size;
    for item in &spec.plan {
        match *item {
            PlanItem::Conv(out) => {
                layers.push(Layer::conv2d(channels, out, 3, 1, 1, &mut rng)?);
                layers.push(Layer::Activation(Unary::Relu));
                channels = out;
            }
            PlanItem::Pool => {
                layers.push(Layer::MaxPool2d);
                size /= 2;
            }
        }
    }
    layers.push(Layer::Flatten);
    let mut features = channels * size * size;
    for &h in &spec.hidden {
        layers.push(Layer::dense(features, h, &mut rng)?);
        layers.push(Layer::Activation(Unary::Relu));
        features = h;
    }
    layers.push(Layer::dense(features, spec.head_classes, &mut rng)?);
    let net = Sequential::new(
        layers,
        &[spec.in_channels, spec.img_size, spec.img_size],
        dropout_seed(seed),
    )?;
    Ok(Model {
        arch: Arch::Recognizer(spec.clone()),
        net,
    })
}

/// Swaps the final dense layer for a freshly initialized one with
/// `new_classes` outputs. Everything else is left untouched.
pub fn replace_head(model: &mut Model, new_classes: usize, rng: &mut Rng) -> Result<()> {
    if new_classes < 2 {
        return Err(Error::InvalidPlan("head needs at least 2 classes".into()));
    }
    let layers = model.net.layers_mut();
    let features = match layers.last() {
        Some(Layer::Dense { weight, .. }) => weight.value.dims()[1],
        _ => return Err(Error::NoHead),
    };
    *layers.last_mut().expect("checked") = Layer::dense(features, new_classes, rng)?;
    if let Arch::Recognizer(spec) = &mut model.arch {
        spec.head_classes = new_classes;
    }
    model.net.output_dims(1)?;
    Ok(())
}

/// Dense projection of the latent onto a `width x s/4 x s/4` map, then two
/// upsample + conv stages and a tanh image head.
pub fn build_generator(spec: &GanSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = Rng::new(seed);
    let (w, half, q) = (spec.width, spec.width / 2, spec.img_size / 4);
    let layers = vec![
        Layer::dense(spec.latent_dim, w * q * q, &mut rng)?,
        Layer::Reshape(vec![w, q, q]),
        Layer::batch_norm2d(w, BN_DEFAULT_MOMENTUM)?,
        Layer::Upsample2x,
        Layer::conv2d(w, w, 3, 1, 1, &mut rng)?,
        Layer::batch_norm2d(w, BN_MOMENTUM)?,
        Layer::leaky_relu(LEAKY_SLOPE),
        Layer::Upsample2x,
        Layer::conv2d(w, half, 3, 1, 1, &mut rng)?,
        Layer::batch_norm2d(half, BN_MOMENTUM)?,
        Layer::leaky_relu(LEAKY_SLOPE),
        Layer::conv2d(half, spec.channels, 3, 1, 1, &mut rng)?,
        Layer::Activation(Unary::Tanh),
    ];
    let net = Sequential::new(layers, &[spec.latent_dim], dropout_seed(seed))?;
    Ok(Model {
        arch: Arch::Generator(*spec),
        net,
    })
}

/// Strided conv, leaky ReLU, channel dropout, batch norm; halves H and W.
pub fn build_conv_block(in_c: usize, out_c: usize, rng: &mut Rng) -> Result<Vec<Layer>> {
    if in_c == 0 || out_c == 0 {
        return Err(Error::InvalidSpec(format!("conv block {in_c} -> {out_c}")));
    }
    Ok(vec![
        Layer::conv2d(in_c, out_c, 3, 2, 1, rng)?,
        Layer::leaky_relu(LEAKY_SLOPE),
        Layer::dropout2d(DISC_DROPOUT)?,
        Layer::batch_norm2d(out_c, BN_MOMENTUM)?,
    ])
}

/// Stem conv to 8 channels, four strided blocks, then a sigmoid score.
pub fn build_discriminator(spec: &GanSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = Rng::new(seed);
    let mut layers = vec![
        Layer::conv2d(spec.channels, DISC_BLOCKS[0].0, 3, 1, 1, &mut rng)?,
        Layer::leaky_relu(LEAKY_SLOPE),
    ];
    for (i, o) in DISC_BLOCKS {
        layers.extend(build_conv_block(i, o, &mut rng)?);
    }
    let s = spec.img_size / 16;
    let last = DISC_BLOCKS[DISC_BLOCKS.len() - 1].1;
    layers.push(Layer::Flatten);
    layers.push(Layer::dense(last * s * s, 1, &mut rng)?);
    layers.push(Layer::Activation(Unary::Sigmoid));
    let net = Sequential::new(
        layers,
        &[spec.channels, spec.img_size, spec.img_size],
        dropout_seed(seed),
    )?;
    Ok(Model {
        arch: Arch::Discriminator(*spec),
        net,
    })
}
