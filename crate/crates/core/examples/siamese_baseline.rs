//! Trains the triplet model and the pairwise baseline with the same budget
//! and compares their one-shot accuracy on held-out glyph classes.
//!
//! cargo run --release --example siamese_baseline -- [iterations]

use tripnet::data::synthetic::{generate, GlyphSpec};
use tripnet::data::{AffineRanges, Augmentation, Role};
use tripnet::eval::{build_episodes, evaluate, EpisodeSpec, Scoring};
use tripnet::net::{ArchConfig, EmbeddingModel, LayerId};
use tripnet::rng::{self, streams};
use tripnet::train::{train, train_siamese, RunOptions, TrainConfig, Trainer};

fn main() -> tripnet::Result<()> {
    let iterations: u64 = std::env::args().nth(1).map_or(300, |a| a.parse().expect("iterations"));
    let spec = GlyphSpec { classes: 100, ..Default::default() };
    let base = generate(&spec, 0, Role::Base, 1)?;
    let novel = generate(&GlyphSpec { classes: 30, ..spec }, 10_000, Role::Novel, 2)?;
    let episodes = build_episodes(
        &novel,
        &EpisodeSpec { way: 5, queries_per_class: 5, runs: 100 },
        &mut rng::stream(0, streams::EPISODES, 0),
    )?;
    let aug = Augmentation::Affine(AffineRanges::default());
    let cfg = TrainConfig { initial_lr: 1e-3, max_iterations: iterations, augment_base: false, seed: 4, ..Default::default() };

    let mut triplet = Trainer::new(EmbeddingModel::build(ArchConfig::small())?, 4);
    train(&mut triplet, &base, &aug, &cfg, &RunOptions::default())?;
    let t = evaluate(&triplet.model, &episodes, LayerId::Fc, &aug, Scoring::Distance)?;

    let mut pairs = Trainer::siamese(EmbeddingModel::build(ArchConfig::small())?, 4);
    train_siamese(&mut pairs, &base, &aug, &cfg, &RunOptions::default())?;
    let by_head = evaluate(&pairs.model, &episodes, LayerId::Fc, &aug, pairs.scoring())?;
    let by_distance = evaluate(&pairs.model, &episodes, LayerId::Fc, &aug, Scoring::Distance)?;

    println!("{iterations} iterations each, 5-way one-shot accuracy:");
    println!("  triplet ranking          {:.3}", t.mean);
    println!("  pairwise, head score     {:.3}", by_head.mean);
    println!("  pairwise, raw distance   {:.3}", by_distance.mean);
    Ok(())
}
