//! The laptop-sized end-to-end protocol: triplet pre-training and a pairwise
//! baseline under the same budget, per-episode one-shot fine-tuning, and a
//! layer sweep, all evaluated on held-out novel-class episodes.

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::ingest::ingest_omniglot_set;
use crate::data::splits::{split_by_group, OMNIGLOT_VALIDATION_ALPHABETS};
use crate::data::{AffineRanges, Augmentation, ClassIndexedDataset, Role};
use crate::error::Result;
use crate::eval::{build_episodes, evaluate, EpisodeSpec, Scoring};
use crate::net::{ArchConfig, EmbeddingModel, LayerId};
use crate::rng::{self, streams};
use crate::train::{finetune, train, train_siamese, FinetuneConfig, RunOptions, TrainConfig, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeskProtocol {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub augmentation: Augmentation,
    pub episodes: EpisodeSpec,
    pub finetune: FinetuneConfig,
    /// Fine-tuning runs once per episode, on the first this many episodes.
    pub finetune_episodes: usize,
}

impl Default for DeskProtocol {
    fn default() -> Self {
        Self {
            arch: ArchConfig::small(),
            train: TrainConfig { initial_lr: 1e-3, batch_size: 32, max_iterations: 2000, augment_base: false, ..Default::default() },
            augmentation: Augmentation::Affine(AffineRanges::default()),
            episodes: EpisodeSpec { way: 5, queries_per_class: 5, runs: 200 },
            finetune: FinetuneConfig { iterations: 20, lr_start_iteration: None },
            finetune_episodes: 20,
        }
    }
}

/// Accuracies from one seed of [`run_desk`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeskOutcome {
    pub seed: u64,
    pub triplet: f64,
    pub siamese: f64,
    /// Mean over the fine-tuned episodes, before and after.
    pub before_finetune: f64,
    pub after_finetune: f64,
    pub layers: Vec<(String, f64)>,
}

impl DeskOutcome {
    pub fn layer(&self, name: &str) -> Option<f64> {
        self.layers.iter().find(|(n, _)| n == name).map(|&(_, a)| a)
    }
}

/// Omniglot background set at `side` pixels, split into training and
/// validation alphabets.
pub fn omniglot_background_split(
    root: &std::path::Path,
    side: usize,
) -> Result<(ClassIndexedDataset, ClassIndexedDataset)> {
    let background = ingest_omniglot_set(&root.join("images_background"), Role::Base, 0, Some(side))?;
    let (train, validation) = split_by_group(&background, &OMNIGLOT_VALIDATION_ALPHABETS)?;
    Ok((train, validation.with_role(Role::Novel)))
}

/// Runs the whole protocol for one seed.
pub fn run_desk(base: &ClassIndexedDataset, novel: &ClassIndexedDataset, p: &DeskProtocol, seed: u64) -> Result<DeskOutcome> {
    let cfg = TrainConfig { seed, ..p.train.clone() };
    let aug = &p.augmentation;
    let episodes = build_episodes(novel, &p.episodes, &mut rng::stream(seed, streams::EPISODES, 0))?;

    let mut triplet = Trainer::new(EmbeddingModel::build(p.arch.clone())?, seed);
    train(&mut triplet, base, aug, &cfg, &RunOptions::default())?;
    let triplet_acc = evaluate(&triplet.model, &episodes, LayerId::Fc, aug, Scoring::Distance)?.mean;
    info!("seed {seed}: triplet accuracy {triplet_acc:.4}");

    let mut siamese = Trainer::siamese(EmbeddingModel::build(p.arch.clone())?, seed);
    train_siamese(&mut siamese, base, aug, &cfg, &RunOptions::default())?;
    let siamese_acc = evaluate(&siamese.model, &episodes, LayerId::Fc, aug, siamese.scoring())?.mean;
    info!("seed {seed}: pairwise baseline accuracy {siamese_acc:.4}");

    let mut layers = Vec::new();
    for layer in triplet.model.layer_registry() {
        let a = evaluate(&triplet.model, &episodes, layer, aug, Scoring::Distance)?.mean;
        layers.push((layer.to_string(), a));
    }

    let (mut before, mut after) = (0.0, 0.0);
    let tuned = &episodes[..p.finetune_episodes.min(episodes.len())];
    for ep in tuned {
        let single = std::slice::from_ref(ep);
        before += evaluate(&triplet.model, single, LayerId::Fc, aug, Scoring::Distance)?.mean;
        let mut t = triplet.clone();
        let ft_cfg = TrainConfig { seed: rng::derive_seed(seed, streams::FINETUNE, ep.run as u64), ..cfg.clone() };
        finetune(&mut t, base, &ep.one_shot_set()?, aug, &ft_cfg, &p.finetune, &RunOptions::default())?;
        after += evaluate(&t.model, single, LayerId::Fc, aug, Scoring::Distance)?.mean;
    }
    let n = tuned.len().max(1) as f64;
    let (before, after) = (before / n, after / n);
    info!("seed {seed}: fine-tuned episodes {before:.4} -> {after:.4}");

    Ok(DeskOutcome {
        seed,
        triplet: triplet_acc,
        siamese: siamese_acc,
        before_finetune: before,
        after_finetune: after,
        layers,
    })
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}
