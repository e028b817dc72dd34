//! Procedural 30-class glyph generator.
//!
//! Each class owns a stroke template (two to four lines or arcs in a unit
//! box) drawn from a stream keyed on the class index. A style seed bends the
//! template control points and slant so the same letters can be rendered in
//! several "hands". Every sample then gets its own jitter: translation up to
//! 2 px, rotation up to 10 degrees, stroke thickness in `[1, 2]` px and
//! additive Gaussian noise with sigma 0.02.

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

use super::{Dataset, GlyphSample, CLASS_NAMES, IMAGE_SIZE};

const TEMPLATE_KEY: u64 = 0x7E4D;
const STYLE_KEY: u64 = 0x57E1;
const SAMPLE_KEY: u64 = 0x5A4D;

/// Pixels per template unit; the template box `[-1, 1]` spans 22 px.
const SCALE: f32 = 11.0;
const ARC_SEGMENTS: usize = 10;
const NOISE_SIGMA: f32 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stroke {
    Line([f32; 2], [f32; 2]),
    Arc { center: [f32; 2], radius: f32, start: f32, sweep: f32 },
}

fn point(rng: &mut Rng) -> [f32; 2] {
    [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)]
}

fn template(class: usize) -> Vec<Stroke> {
    let mut rng = Rng::derive(TEMPLATE_KEY, class as u64, 0);
    let count = 2 + rng.below(3);
    (0..count)
        .map(|_| {
            if rng.uniform() < 0.5 {
                Stroke::Line(point(&mut rng), point(&mut rng))
            } else {
                let c = [rng.range(-0.5, 0.5), rng.range(-0.5, 0.5)];
                Stroke::Arc {
                    center: c,
                    radius: rng.range(0.3, 0.7),
                    start: rng.range(0.0, std::f32::consts::TAU),
                    sweep: rng.range(1.5, 5.5),
                }
            }
        })
        .collect()
}

/// Applies the style perturbation of `style` to a class template.
fn styled(class: usize, style: u64) -> Vec<Stroke> {
    let mut rng = Rng::derive(derive_seed(STYLE_KEY, style, 0), class as u64, 0);
    let slant = rng.range(-0.25, 0.25);
    let bend = |p: [f32; 2], rng: &mut Rng| {
        let (dx, dy) = (rng.range(-0.15, 0.15), rng.range(-0.15, 0.15));
        [p[0] + slant * p[1] + dx, p[1] + dy]
    };
    template(class)
        .into_iter()
        .map(|s| match s {
            Stroke::Line(a, b) => Stroke::Line(bend(a, &mut rng), bend(b, &mut rng)),
            Stroke::Arc { center, radius, start, sweep } => Stroke::Arc {
                center: bend(center, &mut rng),
                radius: radius * rng.range(0.85, 1.15),
                start: start + rng.range(-0.3, 0.3),
                sweep,
            },
        })
        .collect()
}

/// Flattens strokes into line segments in template coordinates.
fn segments(strokes: &[Stroke]) -> Vec<([f32; 2], [f32; 2])> {
    let mut out = Vec::new();
    for s in strokes {
        match *s {
            Stroke::Line(a, b) => out.push((a, b)),
            Stroke::Arc { center, radius, start, sweep } => {
                let at = |t: f32| {
                    let ang = start + sweep * t;
                    [center[0] + radius * ang.cos(), center[1] + radius * ang.sin()]
                };
                for i in 0..ARC_SEGMENTS {
                    let t0 = i as f32 / ARC_SEGMENTS as f32;
                    let t1 = (i + 1) as f32 / ARC_SEGMENTS as f32;
                    out.push((at(t0), at(t1)));
                }
            }
        }
    }
    out
}

fn segment_distance(p: [f32; 2], a: [f32; 2], b: [f32; 2]) -> f32 {
    let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
    let (wx, wy) = (p[0] - a[0], p[1] - a[1]);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

fn render(strokes: &[Stroke], rng: &mut Rng) -> Tensor {
    let angle = rng.range(-10.0, 10.0).to_radians();
    let (tx, ty) = (rng.range(-2.0, 2.0), rng.range(-2.0, 2.0));
    let thickness = rng.range(1.0, 2.0);
    let (sin, cos) = angle.sin_cos();
    let mid = IMAGE_SIZE as f32 / 2.0;
    let to_px = |p: [f32; 2]| {
        let (x, y) = (p[0] * SCALE, p[1] * SCALE);
        [mid + tx + cos * x - sin * y, mid + ty + sin * x + cos * y]
    };
    let segs: Vec<_> = segments(strokes).into_iter().map(|(a, b)| (to_px(a), to_px(b))).collect();

    let mut data = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE);
    for row in 0..IMAGE_SIZE {
        for col in 0..IMAGE_SIZE {
            let p = [col as f32 + 0.5, row as f32 + 0.5];
            let d = segs
                .iter()
                .map(|&(a, b)| segment_distance(p, a, b))
                .fold(f32::INFINITY, f32::min);
            let ink = (thickness / 2.0 + 0.5 - d).clamp(0.0, 1.0);
            data.push((ink + NOISE_SIGMA * rng.normal()).clamp(0.0, 1.0));
        }
    }
    Tensor::new(vec![1, IMAGE_SIZE, IMAGE_SIZE], data).expect("fixed image shape")
}

/// `per_class` jittered renderings of each of the first `class_count`
/// classes in the given style. Sample `i` of class `c` depends only on
/// `(seed, style, c, i)`.
pub fn synth_glyphs_styled(seed: u64, per_class: usize, class_count: usize, style: u64) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::InvalidConfig("per_class must be at least 1".into()));
    }
    if !(1..=CLASS_NAMES.len()).contains(&class_count) {
        return Err(Error::InvalidConfig(format!(
            "class_count must be in 1..={}, got {class_count}",
            CLASS_NAMES.len()
        )));
    }
    let root = derive_seed(seed, SAMPLE_KEY, style);
    let mut samples = Vec::with_capacity(per_class * class_count);
    for class in 0..class_count {
        let strokes = styled(class, style);
        for i in 0..per_class {
            let mut rng = Rng::derive(root, class as u64, i as u64);
            samples.push(GlyphSample {
                image: render(&strokes, &mut rng),
                label: class,
                id: format!("{class:02}-{i:04}"),
            });
        }
    }
    Dataset::new(
        samples,
        CLASS_NAMES[..class_count].iter().map(|s| s.to_string()).collect(),
    )
}

/// Style-0 glyphs for the first `class_count` classes.
pub fn synth_glyphs(seed: u64, per_class: usize, class_count: usize) -> Result<Dataset> {
    synth_glyphs_styled(seed, per_class, class_count, 0)
}
