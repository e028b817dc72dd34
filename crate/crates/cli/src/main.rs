//! `laif`: synthesize glyph data, train the recognizer and the GAN, run
//! recognition and sample generator grids.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use laif_core::checkpoint::{load_checkpoint, save_checkpoint};
use laif_core::data::{load_dataset, read_pgm, save_grid, synth_glyphs_styled, Normalize, IMAGE_SIZE};
use laif_core::loss::{softmax, topk};
use laif_core::models::{
    build_discriminator, build_generator, build_recognizer, replace_head, Arch, ArchKind, GanSpec,
    RecognizerSpec,
};
use laif_core::optim::{AdamConfig, SgdConfig};
use laif_core::rng::{derive_seed, Rng};
use laif_core::train::{
    generate, latent_batch, train_classifier, train_gan, write_metrics_csv, ClassifierConfig, Control,
    GanConfig,
};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "laif", version, about = "Handwritten glyph recognition and generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic glyph dataset as <out>/<class>/<id>.pgm plus manifest.csv
    Synth(SynthArgs),
    /// Train the recognizer with SGD and softmax cross-entropy
    TrainRec(TrainRecArgs),
    /// Print the top-3 classes for one 32x32 PGM image
    Recognize(RecognizeArgs),
    /// Train the generator/discriminator pair
    TrainGan(TrainGanArgs),
    /// Sample a grid of images from a trained generator
    Generate(GenerateArgs),
}

#[derive(clap::Args, Debug)]
struct SynthArgs {
    /// Output directory
    #[arg(long, env = "LAIF_OUT", default_value = "data")]
    out: PathBuf,
    /// Root seed
    #[arg(long, env = "LAIF_SEED", default_value_t = 1)]
    seed: u64,
    /// Images per class
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    per_class: u64,
    /// Number of classes, taken in order from a-z, ß, ä, ö, ü
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..=30))]
    classes: u64,
    /// Handwriting style; different styles bend the stroke templates
    #[arg(long, default_value_t = 0)]
    style: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Plan {
    /// 5 conv layers, 3 pools, one 256-wide hidden layer
    Desk,
    /// VGG19 conv layout with two 512-wide hidden layers
    Vgg19,
}

#[derive(clap::Args, Debug)]
struct TrainRecArgs {
    /// Dataset root (<data>/<class>/<id>.pgm)
    #[arg(long)]
    data: PathBuf,
    /// Start from this recognizer checkpoint; its head is replaced to fit the dataset
    #[arg(long)]
    init_from: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    batch: u64,
    /// SGD learning rate
    #[arg(long, default_value_t = 0.0001)]
    lr: f32,
    /// SGD weight decay (not applied to biases)
    #[arg(long, default_value_t = 0.0001)]
    wd: f32,
    /// SGD momentum
    #[arg(long, default_value_t = 0.9)]
    momentum: f32,
    /// Fraction of each class held out for validation
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, value_enum, default_value_t = Plan::Desk)]
    plan: Plan,
    #[arg(long, env = "LAIF_SEED", default_value_t = 1)]
    seed: u64,
    /// Output directory for metrics.csv, best.ckpt, final.ckpt and run.json
    #[arg(long, env = "LAIF_OUT", default_value = "runs/rec")]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct RecognizeArgs {
    /// Recognizer checkpoint
    #[arg(long)]
    model: PathBuf,
    /// 32x32 P5 PGM image
    #[arg(long)]
    image: PathBuf,
    /// Print every class instead of the top 3
    #[arg(long)]
    all: bool,
}

#[derive(clap::Args, Debug)]
struct TrainGanArgs {
    /// Dataset root (<data>/<class>/<id>.pgm)
    #[arg(long)]
    data: PathBuf,
    /// Update cycles; each trains D then G on one batch
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    batch: u64,
    /// Latent dimension
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    latent: u64,
    /// Adam learning rate for both networks
    #[arg(long, default_value_t = 0.0002)]
    lr: f32,
    #[arg(long, default_value_t = 0.5)]
    beta1: f32,
    #[arg(long, default_value_t = 0.999)]
    beta2: f32,
    /// Generator feature width after the latent projection
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(2..))]
    g_width: u64,
    /// Write samples/epoch_<N>.pgm every K epochs (0 = never)
    #[arg(long, default_value_t = 500)]
    sample_every: usize,
    /// Print losses every K epochs
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    log_every: u64,
    #[arg(long, env = "LAIF_SEED", default_value_t = 1)]
    seed: u64,
    /// Output directory for metrics.csv, g.ckpt, d.ckpt, samples/ and run.json
    #[arg(long, env = "LAIF_OUT", default_value = "runs/gan")]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct GenerateArgs {
    /// Generator checkpoint
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    count: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    cols: u64,
    #[arg(long, env = "LAIF_SEED", default_value_t = 1)]
    seed: u64,
    /// Output PGM path
    #[arg(long, default_value = "grid.pgm")]
    out: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_run_json(dir: &Path, command: &str, fields: Map<String, Value>) -> Result<()> {
    let mut all = Map::new();
    all.insert("command".into(), json!(command));
    all.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    all.extend(fields);
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&Value::Object(all))? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn synth(args: &SynthArgs) -> Result<()> {
    let ds = synth_glyphs_styled(args.seed, args.per_class as usize, args.classes as usize, args.style)?;
    create_dir(&args.out)?;
    ds.write_to(&args.out)?;
    println!(
        "wrote {} images in {} classes to {}",
        ds.len(),
        ds.num_classes(),
        args.out.display()
    );
    Ok(())
}

fn train_rec(args: &TrainRecArgs) -> Result<()> {
    let ds = load_dataset(&args.data)?;
    let (train, val) = ds.split(args.val_fraction)?;
    let classes = ds.num_classes();
    let mut model = match &args.init_from {
        Some(path) => {
            let (mut m, _) = load_checkpoint(path, ArchKind::Recognizer)?;
            replace_head(&mut m, classes, &mut Rng::new(derive_seed(args.seed, 0x4EAD, 0)))?;
            m.net.reseed(derive_seed(args.seed, 0xD0, 0));
            m
        }
        None => {
            let spec = match args.plan {
                Plan::Desk => RecognizerSpec::desk(classes),
                Plan::Vgg19 => RecognizerSpec::vgg19(classes),
            };
            build_recognizer(&spec, args.seed)?
        }
    };
    let cfg = ClassifierConfig {
        epochs: args.epochs,
        batch: args.batch as usize,
        seed: args.seed,
        sgd: SgdConfig {
            lr: args.lr,
            momentum: args.momentum,
            weight_decay: args.wd,
            ..SgdConfig::default()
        },
    };
    create_dir(&args.out)?;
    let mut fields = Map::new();
    fields.insert("data".into(), json!(path_str(&args.data)));
    fields.insert(
        "init_from".into(),
        args.init_from.as_deref().map_or(Value::Null, |p| json!(path_str(p))),
    );
    fields.insert("epochs".into(), json!(args.epochs));
    fields.insert("batch".into(), json!(args.batch));
    fields.insert("lr".into(), json!(args.lr.to_string()));
    fields.insert("wd".into(), json!(args.wd.to_string()));
    fields.insert("momentum".into(), json!(args.momentum.to_string()));
    fields.insert("val_fraction".into(), json!(args.val_fraction));
    fields.insert("arch".into(), json!(model.arch.tag()));
    fields.insert("seed".into(), json!(args.seed));
    fields.insert("out".into(), json!(path_str(&args.out)));
    write_run_json(&args.out, "train-rec", fields)?;

    println!(
        "train-rec: lr={} wd={} momentum={} epochs={} batch={} seed={} train={} val={} classes={}",
        args.lr,
        args.wd,
        args.momentum,
        args.epochs,
        args.batch,
        args.seed,
        train.len(),
        val.len(),
        classes
    );
    let names = ds.class_names.clone();
    let best_path = args.out.join("best.ckpt");
    save_checkpoint(&model, &names, &best_path)?;
    let metrics_path = args.out.join("metrics.csv");
    let mut records = Vec::new();
    let result = train_classifier(&mut model, &train, &val, &cfg, |m, p| {
        let r = p.record;
        println!(
            "epoch {}: train {:.6} loss {:.6} val {:.6}",
            r.epoch, r.train_accuracy, r.loss, r.val_accuracy
        );
        records.push(r);
        write_metrics_csv(&records, &metrics_path)?;
        if p.is_best {
            save_checkpoint(m, &names, &best_path)?;
        }
        Ok(Control::Continue)
    });
    write_metrics_csv(&records, &metrics_path)?;
    result?;
    save_checkpoint(&model, &names, args.out.join("final.ckpt"))?;
    Ok(())
}

fn recognize(args: &RecognizeArgs) -> Result<()> {
    let (model, names) = load_checkpoint(&args.model, ArchKind::Recognizer)?;
    let image = read_pgm(&args.image)?;
    if image.dims() != [1, IMAGE_SIZE, IMAGE_SIZE] {
        bail!(
            "{} is {}x{}, expected {IMAGE_SIZE}x{IMAGE_SIZE}",
            args.image.display(),
            image.dims()[2],
            image.dims()[1]
        );
    }
    let x = image.reshape(&[1, 1, IMAGE_SIZE, IMAGE_SIZE])?;
    let logits = model.net.infer(&x)?;
    let classes = logits.dims()[1];
    if names.len() != classes {
        bail!("checkpoint lists {} class names for {classes} outputs", names.len());
    }
    let ranked = if args.all {
        let probs = softmax(logits.data());
        (0..classes).map(|c| (c, probs[c])).collect()
    } else {
        topk(logits.data(), 3.min(classes))?
    };
    for (c, p) in ranked {
        println!("{} {:.6}", names[c], p);
    }
    Ok(())
}

fn train_gan_cmd(args: &TrainGanArgs) -> Result<()> {
    let ds = load_dataset(&args.data)?;
    let spec = GanSpec {
        latent_dim: args.latent as usize,
        channels: 1,
        img_size: IMAGE_SIZE,
        width: args.g_width as usize,
    };
    let mut g = build_generator(&spec, derive_seed(args.seed, 0x6E, 0))?;
    let mut d = build_discriminator(&spec, derive_seed(args.seed, 0xD1, 0))?;
    let cfg = GanConfig {
        epochs: args.epochs,
        batch: args.batch as usize,
        latent_dim: spec.latent_dim,
        seed: args.seed,
        adam: AdamConfig {
            lr: args.lr,
            beta1: args.beta1,
            beta2: args.beta2,
            ..AdamConfig::default()
        },
        sample_every: args.sample_every,
        ..GanConfig::default()
    };
    let samples_dir = args.out.join("samples");
    create_dir(&samples_dir)?;
    let mut fields = Map::new();
    fields.insert("data".into(), json!(path_str(&args.data)));
    fields.insert("epochs".into(), json!(args.epochs));
    fields.insert("batch".into(), json!(args.batch));
    fields.insert("latent".into(), json!(args.latent));
    fields.insert("lr".into(), json!(args.lr.to_string()));
    fields.insert("beta1".into(), json!(args.beta1.to_string()));
    fields.insert("beta2".into(), json!(args.beta2.to_string()));
    fields.insert("g_width".into(), json!(args.g_width));
    fields.insert("sample_every".into(), json!(args.sample_every));
    fields.insert("generator".into(), json!(g.arch.tag()));
    fields.insert("discriminator".into(), json!(d.arch.tag()));
    fields.insert("seed".into(), json!(args.seed));
    fields.insert("out".into(), json!(path_str(&args.out)));
    write_run_json(&args.out, "train-gan", fields)?;

    println!(
        "train-gan: lr={} beta1={} beta2={} epochs={} batch={} latent={} g_width={} seed={} images={}",
        args.lr,
        args.beta1,
        args.beta2,
        args.epochs,
        args.batch,
        args.latent,
        args.g_width,
        args.seed,
        ds.len()
    );
    let mut records = Vec::new();
    let result = train_gan(&mut g, &mut d, &ds, &cfg, |_, _, p| {
        let r = p.record;
        records.push(r);
        if (r.epoch as u64).is_multiple_of(args.log_every) {
            println!("epoch {}: d_loss {:.6} g_loss {:.6}", r.epoch, r.d_loss, r.g_loss);
        }
        if let Some(s) = p.samples {
            save_grid(s, 8, Normalize::Symmetric, samples_dir.join(format!("epoch_{}.pgm", r.epoch)))?;
        }
        Ok(Control::Continue)
    });
    write_metrics_csv(&records, args.out.join("metrics.csv"))?;
    result?;
    save_checkpoint(&g, &[], args.out.join("g.ckpt"))?;
    save_checkpoint(&d, &[], args.out.join("d.ckpt"))?;
    Ok(())
}

fn generate_cmd(args: &GenerateArgs) -> Result<()> {
    let (g, _) = load_checkpoint(&args.model, ArchKind::Generator)?;
    let Arch::Generator(spec) = g.arch else {
        unreachable!("load_checkpoint checked the kind")
    };
    let mut rng = Rng::new(derive_seed(args.seed, 0x6E7, 0));
    let z = latent_batch(&mut rng, args.count as usize, spec.latent_dim);
    let images = generate(&g, &z)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_grid(&images, args.cols as usize, Normalize::Symmetric, &args.out)?;
    println!("wrote {} samples to {}", args.count, args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::TrainRec(a) => train_rec(a),
        Command::Recognize(a) => recognize(a),
        Command::TrainGan(a) => train_gan_cmd(a),
        Command::Generate(a) => generate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numeric = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<laif_core::Error>(), Some(laif_core::Error::NonFinite(_))));
            ExitCode::from(if numeric { EXIT_NUMERIC } else { EXIT_INPUT })
        }
    }
}
