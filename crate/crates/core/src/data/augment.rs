//! Image transformations used to synthesize extra instances.
//!
//! Characters get a random affine warp. Natural images get a random crop,
//! an optional horizontal flip and a contrast change, since warping them
//! would leave blank borders.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{image_numel, ImageShape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffineRanges {
    /// Horizontal and vertical shear factors are drawn from `[-shear, shear]`.
    pub shear: f64,
    pub rotation_degrees: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Fraction of the image extent, drawn from `[-translate, translate]` per axis.
    pub translate: f64,
}

impl Default for AffineRanges {
    fn default() -> Self {
        Self { shear: 0.3, rotation_degrees: 15.0, scale_min: 0.8, scale_max: 1.2, translate: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub shear_x: f64,
    pub shear_y: f64,
    /// Radians.
    pub rotation: f64,
    pub scale: f64,
    /// Pixels, positive moves content right.
    pub translate_x: f64,
    /// Pixels, positive moves content down.
    pub translate_y: f64,
}

impl AffineParams {
    pub fn identity() -> Self {
        Self { shear_x: 0.0, shear_y: 0.0, rotation: 0.0, scale: 1.0, translate_x: 0.0, translate_y: 0.0 }
    }

    pub fn sample<R: Rng + ?Sized>(ranges: &AffineRanges, height: usize, width: usize, rng: &mut R) -> Self {
        let sym = |rng: &mut R, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let shear_x = sym(rng, ranges.shear);
        let shear_y = sym(rng, ranges.shear);
        let rotation = sym(rng, ranges.rotation_degrees).to_radians();
        let scale = if ranges.scale_max > ranges.scale_min {
            rng.random_range(ranges.scale_min..=ranges.scale_max)
        } else {
            ranges.scale_min
        };
        let translate_x = sym(rng, ranges.translate) * width as f64;
        let translate_y = sym(rng, ranges.translate) * height as f64;
        Self { shear_x, shear_y, rotation, scale, translate_x, translate_y }
    }

    /// Linear part of `scale * rotate * shear`.
    fn matrix(&self) -> [[f64; 2]; 2] {
        let sh = [[1.0, self.shear_x], [self.shear_y, 1.0]];
        let (s, c) = self.rotation.sin_cos();
        let rot = [[c, -s], [s, c]];
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = self.scale * (rot[i][0] * sh[0][j] + rot[i][1] * sh[1][j]);
            }
        }
        m
    }
}

/// Bilinear sample of one channel; taps outside the image read as 0.
fn bilinear(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let tap = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize] as f64
        }
    };
    let mut v = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let wgt = wy * wx;
            if wgt != 0.0 {
                v += wgt * tap(y0 + dy, x0 + dx);
            }
        }
    }
    v as f32
}

/// Warps every channel about the image center. Each output pixel pulls from
/// the inverse-mapped source position.
pub fn affine_warp(image: &[f32], shape: ImageShape, params: &AffineParams) -> Result<Vec<f32>> {
    let (c, h, w) = shape;
    if image.len() != image_numel(shape) {
        return Err(Error::shape(format!("image of {} values is not {shape:?}", image.len())));
    }
    let m = params.matrix();
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-12 {
        return Err(Error::Config("affine parameters give a singular transform".into()));
    }
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = vec![0.0f32; image.len()];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx - params.translate_x;
            let dy = y as f64 - cy - params.translate_y;
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            for ch in 0..c {
                let plane = &image[ch * h * w..(ch + 1) * h * w];
                out[ch * h * w + y * w + x] = bilinear(plane, h, w, sy, sx).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NaturalRanges {
    /// Side of the square crop.
    pub crop: usize,
    pub flip_probability: f64,
    pub contrast_min: f64,
    pub contrast_max: f64,
}

impl Default for NaturalRanges {
    fn default() -> Self {
        Self { crop: 105, flip_probability: 0.5, contrast_min: 0.7, contrast_max: 1.3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NaturalParams {
    pub top: usize,
    pub left: usize,
    pub flip: bool,
    pub contrast: f64,
}

impl NaturalParams {
    /// Centered crop, no flip, unit contrast.
    pub fn center(ranges: &NaturalRanges, shape: ImageShape) -> Result<Self> {
        check_crop(ranges, shape)?;
        Ok(Self { top: (shape.1 - ranges.crop) / 2, left: (shape.2 - ranges.crop) / 2, flip: false, contrast: 1.0 })
    }

    pub fn sample<R: Rng + ?Sized>(ranges: &NaturalRanges, shape: ImageShape, rng: &mut R) -> Result<Self> {
        check_crop(ranges, shape)?;
        let top = rng.random_range(0..=shape.1 - ranges.crop);
        let left = rng.random_range(0..=shape.2 - ranges.crop);
        let flip = rng.random_bool(ranges.flip_probability.clamp(0.0, 1.0));
        let contrast = if ranges.contrast_max > ranges.contrast_min {
            rng.random_range(ranges.contrast_min..=ranges.contrast_max)
        } else {
            ranges.contrast_min
        };
        Ok(Self { top, left, flip, contrast })
    }
}

fn check_crop(ranges: &NaturalRanges, shape: ImageShape) -> Result<()> {
    if ranges.crop == 0 || shape.1 < ranges.crop || shape.2 < ranges.crop {
        return Err(Error::shape(format!(
            "cannot crop {0}x{0} from a {1}x{2} image",
            ranges.crop, shape.1, shape.2
        )));
    }
    Ok(())
}

pub fn crop(image: &[f32], shape: ImageShape, top: usize, left: usize, size: usize) -> Result<Vec<f32>> {
    let (c, h, w) = shape;
    if image.len() != image_numel(shape) || top + size > h || left + size > w {
        return Err(Error::shape(format!("crop {size} at ({top},{left}) does not fit {shape:?}")));
    }
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in top..top + size {
            let row = ch * h * w + y * w;
            out.extend_from_slice(&image[row + left..row + left + size]);
        }
    }
    Ok(out)
}

pub fn flip_horizontal(image: &mut [f32], shape: ImageShape) {
    let (_, _, w) = shape;
    for row in image.chunks_exact_mut(w) {
        row.reverse();
    }
}

/// Scales deviations from the image mean by `factor`, then clamps to `[0, 1]`.
pub fn adjust_contrast(image: &mut [f32], factor: f64) {
    if factor == 1.0 {
        return;
    }
    let mean = image.iter().map(|&v| v as f64).sum::<f64>() / image.len() as f64;
    for v in image.iter_mut() {
        *v = (mean + factor * (*v as f64 - mean)).clamp(0.0, 1.0) as f32;
    }
}

pub fn natural_view(image: &[f32], shape: ImageShape, crop_size: usize, params: &NaturalParams) -> Result<Vec<f32>> {
    let mut out = crop(image, shape, params.top, params.left, crop_size)?;
    let cropped = (shape.0, crop_size, crop_size);
    if params.flip {
        flip_horizontal(&mut out, cropped);
    }
    adjust_contrast(&mut out, params.contrast);
    Ok(out)
}

/// Augmentation attached to a dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    #[default]
    None,
    Affine(AffineRanges),
    Natural(NaturalRanges),
}

impl Augmentation {
    /// Shape of images the network sees for stored images of `input`.
    pub fn output_shape(&self, input: ImageShape) -> Result<ImageShape> {
        match self {
            Augmentation::None | Augmentation::Affine(_) => Ok(input),
            Augmentation::Natural(r) => {
                check_crop(r, input)?;
                Ok((input.0, r.crop, r.crop))
            }
        }
    }

    /// Random transformation of one image.
    pub fn apply<R: Rng + ?Sized>(&self, image: &[f32], shape: ImageShape, rng: &mut R) -> Result<Vec<f32>> {
        match self {
            Augmentation::None => Ok(image.to_vec()),
            Augmentation::Affine(r) => affine_warp(image, shape, &AffineParams::sample(r, shape.1, shape.2, rng)),
            Augmentation::Natural(r) => natural_view(image, shape, r.crop, &NaturalParams::sample(r, shape, rng)?),
        }
    }

    /// Deterministic view used at evaluation time.
    pub fn eval_view(&self, image: &[f32], shape: ImageShape) -> Result<Vec<f32>> {
        match self {
            Augmentation::None | Augmentation::Affine(_) => Ok(image.to_vec()),
            Augmentation::Natural(r) => natural_view(image, shape, r.crop, &NaturalParams::center(r, shape)?),
        }
    }
}
