//! Draws a glyph, applies a few random affine warps and a natural-image
//! crop/flip/contrast view, and prints them as text.
//!
//! cargo run --example augmentation

use tripnet::data::augment::{affine_warp, AffineParams};
use tripnet::data::synthetic::{generate, GlyphSpec};
use tripnet::data::{AffineRanges, Augmentation, NaturalRanges, Role};
use tripnet::rng;

fn show(title: &str, img: &[f32], side: usize) {
    println!("{title}");
    for row in img.chunks(side) {
        let line: String = row.iter().map(|&v| if v > 0.66 { '#' } else if v > 0.33 { '+' } else { '.' }).collect();
        println!("  {line}");
    }
}

fn main() -> tripnet::Result<()> {
    let side = 20;
    let spec = GlyphSpec { classes: 1, instances: 1, side, ..Default::default() };
    let glyphs = generate(&spec, 0, Role::Base, 8)?;
    let glyph = glyphs.image(0, 0)?;
    let shape = glyphs.image_shape();
    show("original", glyph, side);

    let shifted = AffineParams { translate_x: 3.0, ..AffineParams::identity() };
    show("translated 3px right", &affine_warp(glyph, shape, &shifted)?, side);

    let aug = Augmentation::Affine(AffineRanges::default());
    let mut r = rng::stream(1, 0, 0);
    for k in 0..2 {
        show(&format!("random affine #{k}"), &aug.apply(glyph, shape, &mut r)?, side);
    }

    let photo: Vec<f32> = (0..3 * 12 * 12).map(|i| (i % 12) as f32 / 11.0).collect();
    let natural = Augmentation::Natural(NaturalRanges { crop: 8, ..Default::default() });
    let view = natural.apply(&photo, (3, 12, 12), &mut r)?;
    println!("natural view of a 3x12x12 ramp -> {:?}", natural.output_shape((3, 12, 12))?);
    println!("  first row of channel 0: {:?}", &view[..8].iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    Ok(())
}
