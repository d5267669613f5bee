//! Draws triplet, fine-tuning and pair batches and checks their make-up.
//!
//! cargo run --example samplers

use std::collections::BTreeMap;

use tripnet::data::sampler::{sample_finetune_batch, sample_pair_batch, sample_triplet_batch, ImageRef};
use tripnet::data::splits::extract_one_shot;
use tripnet::data::synthetic::{generate, GlyphSpec};
use tripnet::data::{AffineRanges, Augmentation, Role};
use tripnet::rng::{self, streams};

fn show(r: ImageRef) -> String {
    match r {
        ImageRef::Base { class, index } => format!("{class}[{index}]"),
        ImageRef::OneShot { class } => format!("{class}*"),
    }
}

fn main() -> tripnet::Result<()> {
    let spec = GlyphSpec { classes: 12, instances: 6, side: 16, ..Default::default() };
    let base = generate(&spec, 0, Role::Base, 1)?;
    let novel = generate(&GlyphSpec { classes: 5, ..spec }, 100, Role::Novel, 2)?;
    let (oneshot, _) = extract_one_shot(&novel, &mut rng::stream(0, streams::SPLITS, 0))?;

    let mut r = rng::stream(9, streams::TRIPLETS, 0);
    let batch = sample_triplet_batch(&base, 6, &mut r)?;
    println!("triplet batch (class[index]):");
    for t in &batch.triplets {
        println!("  {:>6} {:>6} | {:>6}", show(t.pos1), show(t.pos2), show(t.neg));
    }
    let aug = Augmentation::Affine(AffineRanges::default());
    let images = batch.assemble(&base, Some(&oneshot), &aug, true, &mut r)?;
    println!("assembled images {:?}", images.shape());

    let again = sample_triplet_batch(&base, 6, &mut rng::stream(9, streams::TRIPLETS, 0))?;
    println!("same seed, same batch: {}", again == batch);

    let mut r = rng::stream(9, streams::FINETUNE, 0);
    let ft = sample_finetune_batch(&base, &oneshot, 10_000, &mut r)?;
    println!("\nfine-tuning batch: {:.3} of 10000 triplets are one-shot", ft.one_shot_count() as f64 / 1e4);
    let example = ft.triplets.iter().find(|t| matches!(t.pos1, ImageRef::OneShot { .. })).expect("one-shot triplet");
    println!("  e.g. {} {} | {}", show(example.pos1), show(example.pos2), show(example.neg));

    let pairs = sample_pair_batch(&base, 9, &mut rng::stream(9, streams::PAIRS, 0))?;
    println!("\npair labels {:?}", pairs.labels());

    let mut counts = BTreeMap::new();
    let big = sample_triplet_batch(&base, 12_000, &mut rng::stream(3, streams::TRIPLETS, 0))?;
    for t in &big.triplets {
        *counts.entry(t.pos1.class()).or_insert(0usize) += 1;
    }
    println!("positive class counts over 12000 draws: {:?}", counts.values().collect::<Vec<_>>());
    Ok(())
}
