//! Pre-trains on base glyph classes, then fine-tunes a copy of the model on
//! each episode's one-shot support set and scores that episode again.
//!
//! cargo run --release --example finetune_one_shot -- [pretrain iterations] [finetune iterations]

use tripnet::data::synthetic::{generate, GlyphSpec};
use tripnet::data::{AffineRanges, Augmentation, Role};
use tripnet::eval::{build_episodes, evaluate, EpisodeSpec, Scoring};
use tripnet::net::{ArchConfig, EmbeddingModel, LayerId};
use tripnet::rng::{self, streams};
use tripnet::train::{finetune, train, FinetuneConfig, RunOptions, TrainConfig, Trainer};

fn main() -> tripnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let pretrain: u64 = args.next().map_or(300, |a| a.parse().expect("pretrain iterations"));
    let iterations: u64 = args.next().map_or(20, |a| a.parse().expect("finetune iterations"));

    let spec = GlyphSpec { classes: 100, ..Default::default() };
    let base = generate(&spec, 0, Role::Base, 1)?;
    let novel = generate(&GlyphSpec { classes: 30, ..spec }, 10_000, Role::Novel, 2)?;
    let episodes = build_episodes(
        &novel,
        &EpisodeSpec { way: 5, queries_per_class: 5, runs: 10 },
        &mut rng::stream(0, streams::EPISODES, 0),
    )?;
    let aug = Augmentation::Affine(AffineRanges::default());
    let cfg = TrainConfig { initial_lr: 1e-3, max_iterations: pretrain, augment_base: false, seed: 2, ..Default::default() };

    let mut trainer = Trainer::new(EmbeddingModel::build(ArchConfig::small())?, 2);
    train(&mut trainer, &base, &aug, &cfg, &RunOptions::default())?;

    let ft = FinetuneConfig { iterations, lr_start_iteration: None };
    let (mut before, mut after) = (0.0, 0.0);
    for ep in &episodes {
        let single = std::slice::from_ref(ep);
        let b = evaluate(&trainer.model, single, LayerId::Fc, &aug, Scoring::Distance)?.mean;
        let mut tuned = trainer.clone();
        let seed = rng::derive_seed(2, streams::FINETUNE, ep.run as u64);
        finetune(&mut tuned, &base, &ep.one_shot_set()?, &aug, &TrainConfig { seed, ..cfg.clone() }, &ft, &RunOptions::default())?;
        let a = evaluate(&tuned.model, single, LayerId::Fc, &aug, Scoring::Distance)?.mean;
        println!("episode {:>2}: {b:.2} -> {a:.2}", ep.run);
        before += b;
        after += a;
    }
    let n = episodes.len() as f64;
    println!("mean over {} episodes: {:.3} -> {:.3}", episodes.len(), before / n, after / n);
    Ok(())
}
