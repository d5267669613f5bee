//! Procedural stroke glyphs standing in for handwritten characters when no
//! real dataset is on disk. A class is a set of quadratic Bezier strokes;
//! each instance redraws them with jittered control points and pen width.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{ClassEntry, ClassId, ClassIndexedDataset, Role};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlyphSpec {
    pub classes: usize,
    pub instances: usize,
    pub side: usize,
    /// Classes per group; groups are named `set-01`, `set-02`, ...
    pub classes_per_group: usize,
    pub min_strokes: usize,
    pub max_strokes: usize,
    /// Standard deviation of control-point jitter, as a fraction of the side.
    pub jitter: f64,
    /// Per-instance rotation range in degrees, drawn from `[-r, r]`.
    pub rotation_degrees: f64,
    /// Per-instance scale drawn from `[1 - s, 1 + s]`.
    pub scale: f64,
    /// Per-instance shift as a fraction of the side, drawn from `[-t, t]` per axis.
    pub shift: f64,
}

impl Default for GlyphSpec {
    fn default() -> Self {
        Self {
            classes: 60,
            instances: 20,
            side: 28,
            classes_per_group: 10,
            min_strokes: 2,
            max_strokes: 4,
            jitter: 0.05,
            rotation_degrees: 12.0,
            scale: 0.15,
            shift: 0.08,
        }
    }
}

type Point = (f64, f64);
type Stroke = [Point; 3];

fn prototype<R: Rng + ?Sized>(spec: &GlyphSpec, rng: &mut R) -> Vec<Stroke> {
    let n = rng.random_range(spec.min_strokes..=spec.max_strokes);
    let mut p = || (rng.random_range(0.15..0.85), rng.random_range(0.15..0.85));
    (0..n).map(|_| [p(), p(), p()]).collect()
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn render(strokes: &[Stroke], side: usize, pen: f64) -> Vec<f32> {
    const STEPS: usize = 16;
    let mut segments = Vec::with_capacity(strokes.len() * STEPS);
    for s in strokes {
        let at = |t: f64| {
            let u = 1.0 - t;
            let px = u * u * s[0].0 + 2.0 * u * t * s[1].0 + t * t * s[2].0;
            let py = u * u * s[0].1 + 2.0 * u * t * s[1].1 + t * t * s[2].1;
            (px * side as f64, py * side as f64)
        };
        for k in 0..STEPS {
            segments.push((at(k as f64 / STEPS as f64), at((k + 1) as f64 / STEPS as f64)));
        }
    }
    let mut out = vec![0.0f32; side * side];
    for y in 0..side {
        for x in 0..side {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let d = segments.iter().map(|&(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min);
            out[y * side + x] = (pen + 0.5 - d).clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Generates a balanced dataset of glyph classes, ids `first_id..`.
pub fn generate(spec: &GlyphSpec, first_id: ClassId, role: Role, seed: u64) -> Result<ClassIndexedDataset> {
    if spec.classes == 0 || spec.instances == 0 || spec.side < 4 || spec.classes_per_group == 0 {
        return Err(Error::Config(format!("degenerate glyph spec {spec:?}")));
    }
    if spec.min_strokes == 0 || spec.min_strokes > spec.max_strokes {
        return Err(Error::Config("stroke range must satisfy 1 <= min <= max".into()));
    }
    let jitter = Normal::new(0.0, spec.jitter.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut classes = Vec::with_capacity(spec.classes);
    for c in 0..spec.classes {
        let id = first_id + c as ClassId;
        let mut rng = rng::stream(seed, streams::SYNTHETIC, id as u64);
        let proto = prototype(spec, &mut rng);
        let base_pen = 0.045 * spec.side as f64;
        let images = (0..spec.instances)
            .map(|_| {
                let sym = |rng: &mut rng::Rng, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
                let (sin, cos) = sym(&mut rng, spec.rotation_degrees).to_radians().sin_cos();
                let scale = 1.0 + sym(&mut rng, spec.scale);
                let (dx, dy) = (sym(&mut rng, spec.shift), sym(&mut rng, spec.shift));
                let place = |(x, y): Point| {
                    let (u, v) = (x - 0.5, y - 0.5);
                    (0.5 + dx + scale * (cos * u - sin * v), 0.5 + dy + scale * (sin * u + cos * v))
                };
                let strokes: Vec<Stroke> = proto
                    .iter()
                    .map(|s| s.map(|(x, y)| place((x + jitter.sample(&mut rng), y + jitter.sample(&mut rng)))))
                    .collect();
                let pen = base_pen * rng.random_range(0.8..1.25);
                render(&strokes, spec.side, pen)
            })
            .collect();
        let group = format!("set-{:02}", c / spec.classes_per_group + 1);
        classes.push(ClassEntry::new(id, format!("{group}/glyph{:03}", c + 1), group, images));
    }
    ClassIndexedDataset::new((1, spec.side, spec.side), role, classes)
}
