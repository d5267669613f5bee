//! Trains the small preset on procedurally drawn glyphs and reports 5-way
//! one-shot accuracy on held-out glyph classes.
//!
//! cargo run --release --example train_synthetic -- [iterations] [batch]

use std::time::Instant;

use tripnet::data::synthetic::{generate, GlyphSpec};
use tripnet::data::{AffineRanges, Augmentation, Role};
use tripnet::eval::{build_episodes, evaluate, EpisodeSpec, Scoring};
use tripnet::net::{ArchConfig, EmbeddingModel, LayerId};
use tripnet::rng::{self, streams};
use tripnet::train::{train, RunOptions, TrainConfig, Trainer};

fn main() -> tripnet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let iterations: u64 = args.next().map_or(300, |a| a.parse().expect("iterations"));
    let batch: usize = args.next().map_or(32, |a| a.parse().expect("batch size"));

    let spec = GlyphSpec { classes: 60, instances: 20, ..Default::default() };
    let base = generate(&spec, 0, Role::Base, 1)?;
    let novel = generate(&GlyphSpec { classes: 20, ..spec.clone() }, 10_000, Role::Novel, 2)?;
    let episodes = build_episodes(&novel, &EpisodeSpec { way: 5, queries_per_class: 1, runs: 200 }, &mut rng::stream(0, streams::EPISODES, 0))?;
    let aug = Augmentation::Affine(AffineRanges::default());

    let mut trainer = Trainer::new(EmbeddingModel::build(ArchConfig::small())?, 7);
    let before = evaluate(&trainer.model, &episodes, LayerId::Fc, &aug, Scoring::Distance)?;
    println!("untrained 5-way accuracy {:.3}", before.mean);

    let cfg = TrainConfig {
        initial_lr: 1e-3,
        batch_size: batch,
        max_iterations: iterations,
        augment_base: false,
        seed: 7,
        ..Default::default()
    };
    let started = Instant::now();
    let rows = train(&mut trainer, &base, &aug, &cfg, &RunOptions { log_every: 25, ..Default::default() })?;
    let secs = started.elapsed().as_secs_f64();
    println!(
        "{} iterations in {secs:.1}s ({:.0} ms/iter), final loss {:.4}",
        rows.len(),
        1e3 * secs / rows.len().max(1) as f64,
        rows.last().map_or(f64::NAN, |r| r.total_loss)
    );

    for layer in trainer.model.layer_registry() {
        let r = evaluate(&trainer.model, &episodes, layer, &aug, Scoring::Distance)?;
        println!("{layer:>8}  5-way accuracy {:.3}", r.mean);
    }
    Ok(())
}
