//! Embeds every instance of a few held-out classes and projects the
//! embeddings onto their top two principal components.
//!
//! cargo run --release --example pca_projection -- [iterations] [out.csv]

use tripnet::data::synthetic::{generate, GlyphSpec};
use tripnet::data::{AffineRanges, Augmentation, Role};
use tripnet::eval::{project_classes, projection_csv};
use tripnet::io_util::atomic_write;
use tripnet::net::{ArchConfig, EmbeddingModel};
use tripnet::train::{train, RunOptions, TrainConfig, Trainer};

fn main() -> tripnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: u64 = args.next().map_or(200, |a| a.parse().expect("iterations"));
    let out = args.next();

    let spec = GlyphSpec { classes: 60, ..Default::default() };
    let base = generate(&spec, 0, Role::Base, 1)?;
    let novel = generate(&GlyphSpec { classes: 5, ..spec }, 500, Role::Novel, 2)?;
    let aug = Augmentation::Affine(AffineRanges::default());
    let cfg = TrainConfig { initial_lr: 1e-3, max_iterations: iterations, augment_base: false, seed: 6, ..Default::default() };
    let mut trainer = Trainer::new(EmbeddingModel::build(ArchConfig::small())?, 6);
    train(&mut trainer, &base, &aug, &cfg, &RunOptions::default())?;

    let (points, proj) = project_classes(&trainer.model, &novel, &novel.class_ids(), &aug)?;
    println!("explained variance {:.3} + {:.3}", proj.explained[0], proj.explained[1]);
    for id in novel.class_ids() {
        let mine: Vec<_> = points.iter().filter(|p| p.class == id).collect();
        let n = mine.len() as f64;
        let (x, y) = mine.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x / n, y + p.y / n));
        println!("class {id}: centroid ({x:>7.3}, {y:>7.3}) over {} points", mine.len());
    }
    let csv = projection_csv(&points)?;
    match out {
        Some(path) => atomic_write(std::path::Path::new(&path), &csv)?,
        None => print!("\n{}", String::from_utf8_lossy(&csv[..csv.len().min(200)])),
    }
    Ok(())
}
