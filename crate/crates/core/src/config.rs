//! Run configuration read from a TOML file. Every section has defaults; the
//! resolved configuration is written next to a run's outputs.
//!
//! ```toml
//! seed = 3
//! out_dir = "runs/toy"
//!
//! [arch]
//! preset = "small"
//!
//! [data]
//! base = "cache/background.bin"
//! holdout_groups = ["set-05"]
//!
//! [train]
//! max_iterations = 200
//!
//! [augmentation]
//! kind = "affine"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::splits::{extract_one_shot, split_by_group};
use crate::data::{cache, Augmentation, ClassId, ClassIndexedDataset, OneShotSet, Role};
use crate::error::{Error, Result};
use crate::eval::{build_episodes, load_omniglot_runs, Episode, EpisodeSpec};
use crate::io_util::{atomic_write, read_file};
use crate::net::ArchConfig;
use crate::rng::{self, streams};
use crate::train::{FinetuneConfig, TrainConfig};

/// Either a named preset or a fully spelled-out architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ArchSection {
    Preset {
        preset: String,
        #[serde(default)]
        channels: Option<usize>,
    },
    Explicit(ArchConfig),
}

impl Default for ArchSection {
    fn default() -> Self {
        ArchSection::Preset { preset: "small".into(), channels: None }
    }
}

impl ArchSection {
    pub fn resolve(&self) -> Result<ArchConfig> {
        let arch = match self {
            ArchSection::Preset { preset, channels } => ArchConfig::preset(preset, *channels)?,
            ArchSection::Explicit(a) => a.clone(),
        };
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Dataset cache holding the base classes.
    pub base: Option<PathBuf>,
    /// Cache holding the novel classes. When absent, novel classes come from
    /// `holdout_groups` of the base cache.
    #[serde(default)]
    pub novel: Option<PathBuf>,
    /// Groups moved from the base cache to the novel side.
    #[serde(default)]
    pub holdout_groups: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Triplet,
    Siamese,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    #[serde(default = "default_finetune_iterations")]
    pub iterations: u64,
    #[serde(default)]
    pub lr_start_iteration: Option<u64>,
    /// Novel classes that contribute a one-shot instance; empty means all.
    #[serde(default)]
    pub classes: Vec<ClassId>,
}

fn default_finetune_iterations() -> u64 {
    100
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self { iterations: default_finetune_iterations(), lr_start_iteration: None, classes: Vec::new() }
    }
}

impl FinetuneSection {
    pub fn loop_config(&self) -> FinetuneConfig {
        FinetuneConfig { iterations: self.iterations, lr_start_iteration: self.lr_start_iteration }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSection {
    #[serde(default = "default_way")]
    pub way: usize,
    #[serde(default = "default_queries")]
    pub queries_per_class: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Directory of pre-fixed `runNN/class_labels.txt` runs. Overrides sampling.
    #[serde(default)]
    pub fixed_runs: Option<PathBuf>,
}

fn default_way() -> usize {
    5
}
fn default_queries() -> usize {
    1
}
fn default_runs() -> usize {
    20
}

impl Default for EpisodeSection {
    fn default() -> Self {
        Self { way: default_way(), queries_per_class: default_queries(), runs: default_runs(), fixed_runs: None }
    }
}

impl EpisodeSection {
    pub fn spec(&self) -> EpisodeSpec {
        EpisodeSpec { way: self.way, queries_per_class: self.queries_per_class, runs: self.runs }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectSection {
    /// Novel classes to embed and project.
    #[serde(default)]
    pub classes: Vec<ClassId>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}
fn default_model() -> ModelKind {
    ModelKind::Triplet
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Checkpoint read by `finetune`, `eval` and `project`; defaults to the
    /// one in `out_dir`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default)]
    pub arch: ArchSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augmentation: Augmentation,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub episodes: EpisodeSection,
    #[serde(default)]
    pub project: ProjectSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Expands the architecture preset and pushes the top-level seed into
    /// the training section.
    pub fn resolve(mut self) -> Result<Self> {
        if self.train.seed != 0 && self.train.seed != self.seed {
            return Err(Error::Config("set the seed at the top level, not in [train]".into()));
        }
        self.train.seed = self.seed;
        self.arch = ArchSection::Explicit(self.arch.resolve()?);
        self.train.validate()?;
        Ok(self)
    }

    pub fn arch_config(&self) -> Result<ArchConfig> {
        self.arch.resolve()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// `<out_dir>/<command>.resolved.toml`
    pub fn resolved_path(&self, command: &str) -> PathBuf {
        self.out_dir.join(format!("{command}.resolved.toml"))
    }

    pub fn write_resolved(&self, command: &str) -> Result<()> {
        atomic_write(&self.resolved_path(command), self.to_toml()?.as_bytes())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join(crate::train::CHECKPOINT_FILE))
    }

    /// Base and novel class sets described by `[data]`.
    pub fn datasets(&self) -> Result<(ClassIndexedDataset, Option<ClassIndexedDataset>)> {
        let base_path = self.data.base.as_ref().ok_or_else(|| Error::Config("[data] base is required".into()))?;
        let base = cache::load(base_path)?;
        let (base, held) = if self.data.holdout_groups.is_empty() {
            (base, None)
        } else {
            let (rest, held) = split_by_group(&base, &self.data.holdout_groups)?;
            (rest, Some(held.with_role(Role::Novel)))
        };
        let novel = match (&self.data.novel, held) {
            (Some(p), None) => Some(cache::load(p)?.with_role(Role::Novel)),
            (None, held) => held,
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either [data] novel or holdout_groups, not both".into()));
            }
        };
        Ok((base.with_role(Role::Base), novel))
    }

    /// One seeded instance per configured novel class.
    pub fn one_shot_set(&self, novel: &ClassIndexedDataset) -> Result<OneShotSet> {
        let pool = if self.finetune.classes.is_empty() {
            novel.clone()
        } else {
            novel.subset(&self.finetune.classes, Role::Novel)?
        };
        let (shots, _) = extract_one_shot(&pool, &mut rng::stream(self.seed, streams::SPLITS, 0))?;
        Ok(shots)
    }

    /// Evaluation episodes: the fixed runs if configured, else sampled from `novel`.
    pub fn episodes(&self, novel: Option<&ClassIndexedDataset>, side: usize) -> Result<Vec<Episode>> {
        if let Some(dir) = &self.episodes.fixed_runs {
            return load_omniglot_runs(dir, Some(side));
        }
        let novel = novel.ok_or_else(|| Error::Config("sampled episodes need novel classes in [data]".into()))?;
        build_episodes(novel, &self.episodes.spec(), &mut rng::stream(self.seed, streams::EPISODES, 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.arch, ArchSection::default());
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.augmentation, Augmentation::None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 1").is_err());
        assert!(RunConfig::from_toml("[train]\nlearning_rate = 1.0").is_err());
        assert!(RunConfig::from_toml("[arch]\npreset = \"small\"\nchanels = 3").is_err());
        assert!(RunConfig::from_toml("[augmentation]\nkind = \"affine\"\nshear = 9.0\nwobble = 1").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = "seed = 4\n[arch]\npreset = \"small\"\n[augmentation]\nkind = \"affine\"\nrotation_degrees = 5.0\n";
        let c = RunConfig::from_toml(text).unwrap().resolve().unwrap();
        assert_eq!(c.train.seed, 4);
        assert!(matches!(c.arch, ArchSection::Explicit(_)));
        let again = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
        match c.augmentation {
            Augmentation::Affine(r) => assert_eq!(r.rotation_degrees, 5.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn conflicting_seeds_are_rejected() {
        assert!(RunConfig::from_toml("seed = 1\n[train]\nseed = 2").unwrap().resolve().is_err());
    }
}
