//! Glyph datasets: PGM files on disk, the synthetic generator, splitting,
//! batching and sample grids.

mod pgm;
mod synth;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};
pub use synth::{synth_glyphs, synth_glyphs_styled};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 32;

/// The 30 class names in codepoint order: `a`-`z`, then `ß ä ö ü`.
pub const CLASS_NAMES: [&str; 30] = [
    "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "p", "q", "r",
    "s", "t", "u", "v", "w", "x", "y", "z", "ß", "ä", "ö", "ü",
];

pub const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct GlyphSample {
    /// `[1, 32, 32]`, values in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<GlyphSample>,
    pub class_names: Vec<String>,
}

/// Input scaling applied when batching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalize {
    /// Pixels as stored, in `[0, 1]`.
    Unit,
    /// `2x - 1`, in `[-1, 1]`.
    Symmetric,
}

impl Normalize {
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Normalize::Unit => v,
            Normalize::Symmetric => 2.0 * v - 1.0,
        }
    }

    pub fn invert(self, v: f32) -> f32 {
        match self {
            Normalize::Unit => v,
            Normalize::Symmetric => (v + 1.0) / 2.0,
        }
    }
}

impl Dataset {
    pub fn new(samples: Vec<GlyphSample>, class_names: Vec<String>) -> Result<Dataset> {
        if class_names.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("class names must be strictly sorted".into()));
        }
        for s in &samples {
            if s.label >= class_names.len() {
                return Err(Error::BadLabel {
                    label: s.label,
                    classes: class_names.len(),
                });
            }
            if s.image.dims() != [1, IMAGE_SIZE, IMAGE_SIZE] {
                return Err(Error::shape(
                    "dataset",
                    format!("sample {} has shape {:?}", s.id, s.image.dims()),
                ));
            }
        }
        Ok(Dataset {
            samples,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Stratified split: within each class, the last
    /// `round(count * val_fraction)` samples (in dataset order) go to
    /// validation.
    pub fn split(&self, val_fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::InvalidConfig(format!("val fraction {val_fraction}")));
        }
        let mut by_class = vec![Vec::new(); self.num_classes()];
        for s in &self.samples {
            by_class[s.label].push(s);
        }
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for members in by_class {
            let n_val = (members.len() as f64 * val_fraction).round() as usize;
            let cut = members.len() - n_val;
            train.extend(members[..cut].iter().map(|&s| s.clone()));
            val.extend(members[cut..].iter().map(|&s| s.clone()));
        }
        Ok((
            Dataset::new(train, self.class_names.clone())?,
            Dataset::new(val, self.class_names.clone())?,
        ))
    }

    /// Stacks the given samples into `[B, 1, 32, 32]` plus labels.
    pub fn batch(&self, indices: &[usize], norm: Normalize) -> (Tensor, Vec<usize>) {
        let px = IMAGE_SIZE * IMAGE_SIZE;
        let mut data = Vec::with_capacity(indices.len() * px);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            data.extend(s.image.data().iter().map(|&v| norm.apply(v)));
            labels.push(s.label);
        }
        let x = Tensor::new(vec![indices.len(), 1, IMAGE_SIZE, IMAGE_SIZE], data)
            .expect("batch shape");
        (x, labels)
    }

    /// Writes `root/<class>/<id>.pgm` for every sample plus `manifest.csv`.
    pub fn write_to(&self, root: &Path) -> Result<()> {
        let mut manifest = String::from("id,class,label\n");
        for name in &self.class_names {
            let dir = root.join(name);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for s in &self.samples {
            let class = &self.class_names[s.label];
            write_pgm(&s.image, root.join(class).join(format!("{}.pgm", s.id)))?;
            manifest.push_str(&format!("{},{},{}\n", s.id, class, s.label));
        }
        let path = root.join(MANIFEST);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }
}

fn manifest_classes(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(1))
        .map(str::to_owned)
        .collect())
}

/// Loads `root/<class>/<id>.pgm`. Classes are the subdirectories in sorted
/// order, samples within a class are sorted by file name. When a
/// `manifest.csv` is present every class it mentions must have at least one
/// image.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let mut classes = BTreeSet::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            let name = entry.file_name();
            let name = name
                .to_str()
                .ok_or_else(|| Error::InvalidConfig(format!("non UTF-8 class dir {name:?}")))?;
            if !name.starts_with('.') {
                classes.insert(name.to_owned());
            }
        }
    }
    let manifest = root.join(MANIFEST);
    if manifest.is_file() {
        if let Some(missing) = manifest_classes(&manifest)?.difference(&classes).next() {
            return Err(Error::EmptyClass(missing.clone()));
        }
    }
    if classes.is_empty() {
        return Err(Error::InvalidConfig(format!("no class directories in {}", root.display())));
    }

    let class_names: Vec<String> = classes.into_iter().collect();
    let mut samples = Vec::new();
    for (label, class) in class_names.iter().enumerate() {
        let dir = root.join(class);
        let mut files = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let hidden = path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with('.'));
            if hidden || !path.is_file() {
                continue;
            }
            if path.extension().and_then(|e| e.to_str()) != Some("pgm") {
                return Err(Error::UnknownExtension(path));
            }
            files.push(path);
        }
        if files.is_empty() {
            return Err(Error::EmptyClass(class.clone()));
        }
        files.sort();
        for path in files {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_owned();
            let image = read_pgm(&path)?;
            if image.dims() != [1, IMAGE_SIZE, IMAGE_SIZE] {
                return Err(Error::shape(
                    "load_dataset",
                    format!("{} is {:?}, expected 32x32", path.display(), &image.dims()[1..]),
                ));
            }
            samples.push(GlyphSample { image, label, id });
        }
    }
    Dataset::new(samples, class_names)
}

/// One epoch of shuffled mini-batches. The order depends only on
/// `(seed, epoch)`; the final partial batch is kept.
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    norm: Normalize,
}

pub fn batches(
    ds: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    norm: Normalize,
) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    Rng::new(derive_seed(seed, 0xBA7C, epoch)).shuffle(&mut order);
    Ok(Batches {
        ds,
        order,
        batch_size,
        pos: 0,
        norm,
    })
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let item = self.ds.batch(&self.order[self.pos..end], self.norm);
        self.pos = end;
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for Batches<'_> {}

pub const GRID_GAP: usize = 2;

/// Tiles `images: [K, 1, H, W]` into rows of `cols`, separated and
/// surrounded by 2 px white lines. Pixels are mapped back to `[0, 1]`
/// through `norm` first. Unused tiles in the last row stay black.
pub fn grid_image(images: &Tensor, cols: usize, norm: Normalize) -> Result<Tensor> {
    let (k, h, w) = match *images.dims() {
        [k, 1, h, w] => (k, h, w),
        ref d => return Err(Error::shape("grid", format!("expected [K, 1, H, W], got {d:?}"))),
    };
    if cols == 0 {
        return Err(Error::InvalidConfig("grid needs at least one column".into()));
    }
    let rows = k.div_ceil(cols);
    let gh = rows * h + (rows + 1) * GRID_GAP;
    let gw = cols * w + (cols + 1) * GRID_GAP;
    let mut canvas = vec![1.0f32; gh * gw];
    for r in 0..rows {
        for c in 0..cols {
            let top = GRID_GAP + r * (h + GRID_GAP);
            let left = GRID_GAP + c * (w + GRID_GAP);
            let idx = r * cols + c;
            for y in 0..h {
                let dst = &mut canvas[(top + y) * gw + left..][..w];
                if idx < k {
                    let src = &images.data()[(idx * h + y) * w..][..w];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = norm.invert(s).clamp(0.0, 1.0);
                    }
                } else {
                    dst.fill(0.0);
                }
            }
        }
    }
    Tensor::new(vec![1, gh, gw], canvas)
}

pub fn save_grid(images: &Tensor, cols: usize, norm: Normalize, path: impl AsRef<Path>) -> Result<()> {
    write_pgm(&grid_image(images, cols, norm)?, path)
}
