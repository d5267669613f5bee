#![allow(dead_code)]

use std::path::Path;

use tripnet::data::synthetic::{generate, GlyphSpec};
use tripnet::data::Role;

/// Saves an ink = 1 glyph as a white-background grayscale PNG.
pub fn write_png(path: &Path, pixels: &[f32], side: usize) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    let bytes: Vec<u8> = pixels.iter().map(|&v| ((1.0 - v).clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    image::GrayImage::from_raw(side as u32, side as u32, bytes).unwrap().save(path).unwrap();
}

/// `dir/Alphabet_k/characterNN/NN.png`, drawn from synthetic glyphs.
pub fn fake_omniglot(dir: &Path, alphabets: usize, chars: usize, per: usize, side: usize, seed: u64) {
    let spec = GlyphSpec { classes: alphabets * chars, instances: per, side, classes_per_group: chars, ..Default::default() };
    let ds = generate(&spec, 0, Role::Base, seed).unwrap();
    for (i, class) in ds.classes().iter().enumerate() {
        let char_dir = dir.join(format!("Alphabet_{}", i / chars + 1)).join(format!("character{:02}", i % chars + 1));
        for (j, img) in class.images().enumerate() {
            write_png(&char_dir.join(format!("{:02}.png", j + 1)), img, side);
        }
    }
}

/// Pre-fixed runs in the `runNN/class_labels.txt` layout, `way` classes each
/// with one training and one test image.
pub fn fake_runs(dir: &Path, runs: usize, way: usize, side: usize, seed: u64) {
    let spec = GlyphSpec { classes: way, instances: 2, side, ..Default::default() };
    for r in 0..runs {
        let ds = generate(&spec, 0, Role::Novel, seed + r as u64).unwrap();
        let run = format!("run{:02}", r + 1);
        let mut labels = String::new();
        for (c, class) in ds.classes().iter().enumerate() {
            let train = format!("{run}/training/class{:02}.png", c + 1);
            let test = format!("{run}/test/item{:02}.png", way - c);
            write_png(&dir.join(&train), class.image(0), side);
            write_png(&dir.join(&test), class.image(1), side);
            labels.push_str(&format!("{test} {train}\n"));
        }
        std::fs::write(dir.join(&run).join("class_labels.txt"), labels).unwrap();
    }
}
