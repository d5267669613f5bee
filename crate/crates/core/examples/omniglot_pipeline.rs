//! Ingests an Omniglot-layout directory into a dataset cache, splits off the
//! validation alphabets and loads pre-fixed one-shot runs.
//!
//! With OMNIGLOT_ROOT pointing at a directory holding `images_background`
//! (and optionally `one-shot-classification` runs) the real data is used.
//! Otherwise a small fake tree is drawn into a temporary directory.
//!
//! cargo run --release --example omniglot_pipeline

use std::path::{Path, PathBuf};

use tripnet::data::ingest::ingest_omniglot_set;
use tripnet::data::splits::{split_by_group, OMNIGLOT_VALIDATION_ALPHABETS};
use tripnet::data::synthetic::{generate, GlyphSpec};
use tripnet::data::{cache, Role};
use tripnet::eval::load_omniglot_runs;

fn write_png(path: &Path, pixels: &[f32], side: usize) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    let bytes = pixels.iter().map(|&v| ((1.0 - v).clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    image::GrayImage::from_raw(side as u32, side as u32, bytes).unwrap().save(path).unwrap();
}

/// Three alphabets of four characters; the second borrows a validation alphabet name.
fn fake_tree(root: &Path) {
    let side = 35;
    let names = ["Latin", OMNIGLOT_VALIDATION_ALPHABETS[0], "Futurama"];
    let spec = GlyphSpec { classes: 12, instances: 20, side, classes_per_group: 4, ..Default::default() };
    let glyphs = generate(&spec, 0, Role::Base, 5).unwrap();
    for (i, class) in glyphs.classes().iter().enumerate() {
        let dir = root.join("images_background").join(names[i / 4]).join(format!("character{:02}", i % 4 + 1));
        for (j, img) in class.images().enumerate() {
            write_png(&dir.join(format!("{:02}_{:02}.png", i + 1, j + 1)), img, side);
        }
    }
}

fn main() -> tripnet::Result<()> {
    let _tmp;
    let root = match std::env::var_os("OMNIGLOT_ROOT") {
        Some(r) => PathBuf::from(r),
        None => {
            _tmp = tempfile::tempdir().expect("temp dir");
            fake_tree(_tmp.path());
            println!("OMNIGLOT_ROOT not set, using a fake tree in {}", _tmp.path().display());
            _tmp.path().to_path_buf()
        }
    };

    let background = ingest_omniglot_set(&root.join("images_background"), Role::Base, 0, Some(28))?;
    println!(
        "background: {} characters, {} images of {:?}, {} alphabets",
        background.num_classes(),
        background.num_images(),
        background.image_shape(),
        background.groups().len()
    );

    let cache_dir = tempfile::tempdir().expect("temp dir");
    let path = cache_dir.path().join("background.bin");
    cache::save(&background, &path)?;
    let reloaded = cache::load(&path)?;
    let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!("cache {} bytes, reload identical: {}", size, reloaded == background);

    let present = background.groups();
    let held: Vec<&str> = OMNIGLOT_VALIDATION_ALPHABETS.iter().copied().filter(|a| present.iter().any(|g| g == a)).collect();
    let (train, validation) = split_by_group(&background, &held)?;
    println!("training alphabets {:?}", train.groups());
    println!("validation: {} characters", validation.num_classes());

    let runs = root.join("one-shot-classification");
    if runs.is_dir() {
        let episodes = load_omniglot_runs(&runs, Some(28))?;
        println!("{} fixed runs, {}-way", episodes.len(), episodes[0].way());
    }
    Ok(())
}
