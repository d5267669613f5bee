//! Trains once, saves and reloads the checkpoint, then scores nearest
//! neighbour classification with features from every conv layer and the
//! embedding, on novel classes and on unseen instances of base classes.
//!
//! cargo run --release --example layer_sweep -- [iterations]

use tripnet::checkpoint::Checkpoint;
use tripnet::data::synthetic::{generate, GlyphSpec};
use tripnet::data::{AffineRanges, Augmentation, Role};
use tripnet::eval::{build_episodes, evaluate, EpisodeSpec, Scoring};
use tripnet::net::{ArchConfig, EmbeddingModel};
use tripnet::rng::{self, streams};
use tripnet::train::{train, RunOptions, TrainConfig, Trainer};

fn main() -> tripnet::Result<()> {
    let iterations: u64 = std::env::args().nth(1).map_or(300, |a| a.parse().expect("iterations"));
    let spec = GlyphSpec { classes: 100, ..Default::default() };
    let base = generate(&spec, 0, Role::Base, 1)?;
    let novel = generate(&GlyphSpec { classes: 30, ..spec.clone() }, 10_000, Role::Novel, 2)?;
    // Fresh draws of the first 30 base classes: same glyph templates, new instances.
    let seen = generate(&GlyphSpec { classes: 30, ..spec }, 0, Role::Novel, 1)?;
    let aug = Augmentation::Affine(AffineRanges::default());
    let cfg = TrainConfig { initial_lr: 1e-3, max_iterations: iterations, augment_base: false, seed: 3, ..Default::default() };

    let mut trainer = Trainer::new(EmbeddingModel::build(ArchConfig::small())?, 3);
    train(&mut trainer, &base, &aug, &cfg, &RunOptions::default())?;
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("checkpoint.bin");
    trainer.checkpoint().save(&path)?;
    let model = Trainer::from_checkpoint(Checkpoint::load(&path)?).model;

    let spec = EpisodeSpec { way: 5, queries_per_class: 5, runs: 100 };
    let on_novel = build_episodes(&novel, &spec, &mut rng::stream(0, streams::EPISODES, 0))?;
    let on_seen = build_episodes(&seen, &spec, &mut rng::stream(0, streams::EPISODES, 1))?;
    println!("{:>9}  {:>6}  {:>6}", "layer", "novel", "seen");
    for layer in model.layer_registry() {
        let a = evaluate(&model, &on_novel, layer, &aug, Scoring::Distance)?.mean;
        let b = evaluate(&model, &on_seen, layer, &aug, Scoring::Distance)?.mean;
        println!("{:>9}  {a:>6.3}  {b:>6.3}", layer.to_string());
    }
    Ok(())
}
