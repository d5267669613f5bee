//! Command-line front end. Every command reads one TOML run configuration,
//! applies flag overrides, and writes its outputs into the run directory.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use crate::checkpoint::Checkpoint;
use crate::config::{ModelKind, RunConfig};
use crate::data::ingest::{ingest_natural, ingest_omniglot_set};
use crate::data::synthetic::{generate, GlyphSpec};
use crate::data::{cache, ClassId, ClassIndexedDataset, Role};
use crate::error::{Error, Result};
use crate::eval::{evaluate, project_classes, projection_csv};
use crate::io_util::atomic_write;
use crate::net::{EmbeddingModel, LayerId};
use crate::train::{finetune, train, train_siamese, RunOptions, Trainer, METRICS_FILE};

#[derive(Debug, Parser)]
#[command(name = "tripnet", version, about = "Triplet ranking embeddings for one-shot classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode a dataset once into a binary cache plus a text summary.
    Ingest(IngestArgs),
    /// Pre-train on the base classes.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from the checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        iterations: Option<u64>,
    },
    /// Fine-tune a checkpoint with one-shot instances of novel classes.
    Finetune {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        iterations: Option<u64>,
    },
    /// One-shot accuracy over evaluation episodes.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Layer whose features are compared, e.g. `conv-3-2` or `fc-1`.
        #[arg(long, default_value = "fc-1")]
        layer: String,
    },
    /// Two-dimensional PCA of the embeddings of selected classes.
    Project {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated class ids; overrides `[project] classes`.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<ClassId>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, short)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Zero wall-clock columns so repeated runs produce identical bytes.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(value_enum)]
    pub kind: DatasetKind,
    /// Cache file to write; the summary goes to `<out>.summary.txt`.
    #[arg(long)]
    pub out: PathBuf,
    /// Omniglot set directory (`alphabet/character/*.png`) or natural-image root.
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// CSV of `path,class_id[,class_name]` for natural images.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Resize glyphs (Omniglot) or glyph side (synthetic).
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long, value_enum, default_value = "base")]
    pub role: RoleArg,
    #[arg(long, default_value_t = 0)]
    pub first_id: ClassId,
    #[arg(long, default_value_t = 60)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DatasetKind {
    Omniglot,
    Natural,
    Synthetic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RoleArg {
    Base,
    Novel,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Base => Role::Base,
            RoleArg::Novel => Role::Novel,
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(&args),
        Command::Train { run, resume, iterations } => cmd_train(&run, resume, iterations),
        Command::Finetune { run, iterations } => cmd_finetune(&run, iterations),
        Command::Eval { run, layer } => cmd_eval(&run, &layer),
        Command::Project { run, classes } => cmd_project(&run, &classes),
    }
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required for this dataset kind")))
}

pub fn summary(ds: &ClassIndexedDataset) -> String {
    let (c, h, w) = ds.image_shape();
    let mut s = format!(
        "classes: {}\nimages: {}\nshape: {c}x{h}x{w}\nrole: {:?}\ngroups: {}\n",
        ds.num_classes(),
        ds.num_images(),
        ds.role,
        ds.groups().len()
    );
    for warning in &ds.warnings {
        s.push_str(&format!("warning: {warning}\n"));
    }
    s
}

pub fn summary_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".summary.txt");
    out.with_file_name(name)
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let role = Role::from(a.role);
    let ds = match a.kind {
        DatasetKind::Omniglot => ingest_omniglot_set(required(&a.root, "root")?, role, a.first_id, a.side)?,
        DatasetKind::Natural => {
            let ds = ingest_natural(required(&a.root, "root")?, required(&a.manifest, "manifest")?, role)?;
            if a.side.is_some() {
                warn!("--side is ignored for natural images");
            }
            ds
        }
        DatasetKind::Synthetic => {
            let spec = GlyphSpec {
                classes: a.classes,
                instances: a.instances,
                side: a.side.unwrap_or(GlyphSpec::default().side),
                ..Default::default()
            };
            generate(&spec, a.first_id, role, a.seed)?
        }
    };
    for w in &ds.warnings {
        warn!("{w}");
    }
    cache::save(&ds, &a.out)?;
    let text = summary(&ds);
    atomic_write(&summary_path(&a.out), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn load_config(r: &RunArgs, command: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&r.config)?;
    if let Some(seed) = r.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(dir) = &r.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(ck) = &r.checkpoint {
        cfg.checkpoint = Some(ck.clone());
    }
    let cfg = cfg.resolve()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    cfg.write_resolved(command)?;
    Ok(cfg)
}

fn fresh_metrics(cfg: &RunConfig) -> Result<()> {
    let path = cfg.out_dir.join(METRICS_FILE);
    match std::fs::remove_file(&path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e)),
        _ => Ok(()),
    }
}

fn options<'a>(cfg: &'a RunConfig, r: &RunArgs) -> RunOptions<'a> {
    RunOptions { out_dir: Some(&cfg.out_dir), validation: None, deterministic: r.deterministic, log_every: 10 }
}

fn cmd_train(r: &RunArgs, resume: bool, iterations: Option<u64>) -> Result<()> {
    let mut cfg = load_config(r, "train")?;
    if let Some(n) = iterations {
        cfg.train.max_iterations = n;
        cfg.write_resolved("train")?;
    }
    let (base, novel) = cfg.datasets()?;
    let arch = cfg.arch_config()?;
    let validation = match &novel {
        Some(_) if cfg.train.eval_every > 0 => Some(cfg.episodes(novel.as_ref(), arch.input_shape.1)?),
        _ => None,
    };
    let siamese = cfg.model == ModelKind::Siamese;
    let mut trainer = if resume {
        let t = Trainer::from_checkpoint(Checkpoint::load(&cfg.out_dir.join(crate::train::CHECKPOINT_FILE))?);
        if t.head.is_some() != siamese {
            return Err(Error::Config("checkpoint model kind differs from the configured one".into()));
        }
        t
    } else {
        fresh_metrics(&cfg)?;
        let model = EmbeddingModel::build(arch)?;
        if siamese {
            Trainer::siamese(model, cfg.seed)
        } else {
            Trainer::new(model, cfg.seed)
        }
    };
    info!(
        "training {} parameters on {} base classes, iterations {}..{}",
        trainer.model.parameter_count(),
        base.num_classes(),
        trainer.iteration,
        cfg.train.max_iterations
    );
    let opts = RunOptions { validation: validation.as_deref(), ..options(&cfg, r) };
    let rows = if siamese {
        train_siamese(&mut trainer, &base, &cfg.augmentation, &cfg.train, &opts)?
    } else {
        train(&mut trainer, &base, &cfg.augmentation, &cfg.train, &opts)?
    };
    println!(
        "trained to iteration {}, final loss {}",
        trainer.iteration,
        rows.last().map_or("n/a".to_string(), |r| format!("{:.6}", r.total_loss))
    );
    Ok(())
}

fn cmd_finetune(r: &RunArgs, iterations: Option<u64>) -> Result<()> {
    let mut cfg = load_config(r, "finetune")?;
    if let Some(n) = iterations {
        cfg.finetune.iterations = n;
        cfg.write_resolved("finetune")?;
    }
    let input = cfg
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Config("fine-tuning needs an input checkpoint (--checkpoint or `checkpoint`)".into()))?;
    let output = cfg.out_dir.join(crate::train::CHECKPOINT_FILE);
    if same_file(&input, &output) {
        return Err(Error::Config("the input checkpoint would be overwritten; choose another out_dir".into()));
    }
    let (base, novel) = cfg.datasets()?;
    let novel = novel.ok_or_else(|| Error::Config("fine-tuning needs novel classes in [data]".into()))?;
    let oneshot = cfg.one_shot_set(&novel)?;
    let mut trainer = Trainer::from_checkpoint(Checkpoint::load(&input)?);
    fresh_metrics(&cfg)?;
    info!("fine-tuning with {} one-shot classes", oneshot.len());
    let rows = finetune(
        &mut trainer,
        &base,
        &oneshot,
        &cfg.augmentation,
        &cfg.train,
        &cfg.finetune.loop_config(),
        &options(&cfg, r),
    )?;
    if rows.is_empty() {
        trainer.checkpoint().save(&output)?;
    }
    println!("fine-tuned for {} iterations", rows.len());
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn cmd_eval(r: &RunArgs, layer: &str) -> Result<()> {
    let cfg = load_config(r, "eval")?;
    let layer: LayerId = layer.parse()?;
    let ck = Checkpoint::load(&cfg.checkpoint_path())?;
    let trainer = Trainer::from_checkpoint(ck);
    let novel = if cfg.episodes.fixed_runs.is_some() { None } else { cfg.datasets()?.1 };
    let side = trainer.model.arch().input_shape.1;
    let episodes = cfg.episodes(novel.as_ref(), side)?;
    let report = evaluate(&trainer.model, &episodes, layer, &cfg.augmentation, trainer.scoring())?;
    let out = cfg.out_dir.join(format!("eval-{layer}.csv"));
    atomic_write(&out, &report.to_csv()?)?;
    println!("{layer}: mean accuracy {:.4} over {} runs ({})", report.mean, report.runs(), out.display());
    Ok(())
}

fn cmd_project(r: &RunArgs, classes: &[ClassId]) -> Result<()> {
    let cfg = load_config(r, "project")?;
    let classes = if classes.is_empty() { cfg.project.classes.clone() } else { classes.to_vec() };
    if classes.is_empty() {
        return Err(Error::Config("no classes to project; pass --classes or set [project] classes".into()));
    }
    let model = Checkpoint::load(&cfg.checkpoint_path())?.model;
    let (base, novel) = cfg.datasets()?;
    let source = match novel {
        Some(n) if classes.iter().all(|&c| n.class(c).is_ok()) => n,
        _ => base,
    };
    let (points, proj) = project_classes(&model, &source, &classes, &cfg.augmentation)?;
    let out = cfg.out_dir.join("projection.csv");
    atomic_write(&out, &projection_csv(&points)?)?;
    println!(
        "{} points, explained variance {:.4} / {:.4} ({})",
        points.len(),
        proj.explained[0],
        proj.explained[1],
        out.display()
    );
    Ok(())
}
