//! Pre-training, one-shot fine-tuning and the pairwise baseline loop.
//!
//! The batch for iteration `i` is drawn from a generator keyed by
//! `(seed, i)`, so a run resumed from a checkpoint replays exactly the
//! batches an uninterrupted run would have seen.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{trainable_names, Checkpoint};
use crate::data::sampler::{sample_finetune_batch, sample_pair_batch, sample_triplet_batch};
use crate::data::{Augmentation, ClassIndexedDataset, OneShotSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Episode, Scoring};
use crate::loss::{record_siamese_loss, record_total_loss, LossConfig, SiameseHead};
use crate::net::{EmbeddingModel, LayerId, Mode};
use crate::optim::{Adam, LrSchedule};
use crate::rng::{self, streams};
use crate::tensor::{Tape, Tensor};

fn default_lr() -> f64 {
    1e-4
}
fn default_halving() -> u64 {
    10_000
}
fn default_batch() -> usize {
    64
}
fn default_iterations() -> u64 {
    2_000
}
fn default_margin() -> f64 {
    2.0
}
fn default_lambda() -> f64 {
    1e-3
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub initial_lr: f64,
    #[serde(default = "default_halving")]
    pub lr_halving_period: u64,
    /// Triplets (or pairs for the baseline) per batch.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_iterations")]
    pub max_iterations: u64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub seed: u64,
    /// 0 writes only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// 0 disables periodic validation.
    #[serde(default)]
    pub eval_every: u64,
    /// Pass base-class images through the dataset augmentation. One-shot
    /// instances are always augmented during fine-tuning.
    #[serde(default = "default_true")]
    pub augment_base: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: default_lr(),
            lr_halving_period: default_halving(),
            batch_size: default_batch(),
            max_iterations: default_iterations(),
            margin: default_margin(),
            lambda: default_lambda(),
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            augment_base: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0) || self.lr_halving_period == 0 || self.batch_size == 0 {
            return Err(Error::Config("initial_lr, lr_halving_period and batch_size must be positive".into()));
        }
        self.loss().validate()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { margin: self.margin, lambda: self.lambda, ..Default::default() }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { initial: self.initial_lr, halving_period: self.lr_halving_period }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub lr: f64,
    pub batch_loss: f64,
    pub reg_loss: f64,
    pub total_loss: f64,
    /// Always 0 in deterministic mode.
    pub wall_ms: u64,
    pub val_accuracy: Option<f64>,
}

/// Appends rows to a CSV file, writing the header only when the file is new.
pub struct MetricsLog {
    path: PathBuf,
}

impl MetricsLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, rows: &[MetricsRow]) -> Result<()> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let fresh = std::fs::metadata(&self.path).map(|m| m.len() == 0).unwrap_or(true);
        let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        if fresh && rows.is_empty() {
            w.write_record(["iteration", "lr", "batch_loss", "reg_loss", "total_loss", "wall_ms", "val_accuracy"])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&self.path, e))
    }

    pub fn read(path: &Path) -> Result<Vec<MetricsRow>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }
}

/// Where and how a loop reports.
#[derive(Clone, Debug, Default)]
pub struct RunOptions<'a> {
    /// Receives `checkpoint.bin` and `metrics.csv`; `None` keeps everything in memory.
    pub out_dir: Option<&'a Path>,
    pub validation: Option<&'a [Episode]>,
    /// Zeroes wall-clock columns so logs are byte-reproducible.
    pub deterministic: bool,
    /// Progress line every this many iterations; 0 silences it.
    pub log_every: u64,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";

/// Model, optimizer state and iteration counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub model: EmbeddingModel<f32>,
    pub adam: Adam<f32>,
    /// Iterations completed.
    pub iteration: u64,
    /// Present for the pairwise baseline.
    pub head: Option<SiameseHead>,
}

/// Loss values of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub batch: f64,
    pub regularizer: f64,
    pub total: f64,
}

impl Trainer {
    /// He-initialized triplet model.
    pub fn new(mut model: EmbeddingModel<f32>, seed: u64) -> Self {
        model.he_init(seed);
        let adam = fresh_adam(&model, false);
        Self { model, adam, iteration: 0, head: None }
    }

    /// He-initialized model with a pairwise head.
    pub fn siamese(mut model: EmbeddingModel<f32>, seed: u64) -> Self {
        model.he_init(seed);
        let adam = fresh_adam(&model, true);
        Self { model, adam, iteration: 0, head: Some(SiameseHead::default()) }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        let siamese = ck.siamese.is_some();
        let adam = ck.optimizer.unwrap_or_else(|| fresh_adam(&ck.model, siamese));
        Self { model: ck.model, adam, iteration: ck.iteration, head: ck.siamese }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            iteration: self.iteration,
            optimizer: Some(self.adam.clone()),
            siamese: self.head,
        }
    }

    pub fn scoring(&self) -> Scoring {
        self.head.map_or(Scoring::Distance, Scoring::Siamese)
    }

    /// Forward, backward and one Adam update on `[3B, C, H, W]` triplet images.
    pub fn triplet_step(&mut self, images: Tensor<f32>, triplets: usize, loss: &LossConfig, lr: f64) -> Result<StepLosses> {
        let mut tape = Tape::new();
        let params = self.model.bind(&mut tape);
        let x = tape.constant(images);
        let emb = self.model.forward(&mut tape, &params, x, Mode::Train)?;
        let l = record_total_loss(&mut tape, emb, triplets, loss)?;
        let losses = StepLosses {
            batch: tape.value(l.triplet).item() as f64,
            regularizer: tape.value(l.regularizer).item() as f64,
            total: tape.value(l.total).item() as f64,
        };
        self.check_finite(&losses)?;
        tape.backward(l.total)?;
        self.apply(&tape, &params, &[], lr)?;
        Ok(losses)
    }

    /// Same for `[2B, C, H, W]` pair images under the pairwise head.
    pub fn pair_step(&mut self, images: Tensor<f32>, same_class: &[bool], lr: f64) -> Result<StepLosses> {
        let head = self.head.ok_or_else(|| Error::Contract("pair step on a model without a pairwise head".into()))?;
        let mut tape = Tape::new();
        let params = self.model.bind(&mut tape);
        let w = tape.param(Tensor::scalar(head.weight as f32));
        let b = tape.param(Tensor::scalar(head.bias as f32));
        let x = tape.constant(images);
        let emb = self.model.forward(&mut tape, &params, x, Mode::Train)?;
        let l = record_siamese_loss(&mut tape, emb, same_class, w, b)?;
        let v = tape.value(l).item() as f64;
        let losses = StepLosses { batch: v, regularizer: 0.0, total: v };
        self.check_finite(&losses)?;
        tape.backward(l)?;
        self.apply(&tape, &params, &[w, b], lr)?;
        Ok(losses)
    }

    fn check_finite(&self, l: &StepLosses) -> Result<()> {
        if !l.total.is_finite() {
            return Err(Error::NonFinite { context: format!("loss at iteration {}", self.iteration) });
        }
        Ok(())
    }

    fn apply(&mut self, tape: &Tape<f32>, params: &[crate::tensor::Var], head: &[crate::tensor::Var], lr: f64) -> Result<()> {
        let names = trainable_names(&self.model, !head.is_empty());
        let zero: Vec<Tensor<f32>> = params.iter().chain(head).map(|&v| Tensor::zeros(tape.value(v).shape().to_vec())).collect();
        let grads: Vec<&Tensor<f32>> = params
            .iter()
            .chain(head)
            .zip(&zero)
            .map(|(&v, z)| tape.grad(v).unwrap_or(z))
            .collect();
        let mut head_tensors: Vec<Tensor<f32>> = head.iter().map(|&v| tape.value(v).clone()).collect();
        let mut targets: Vec<&mut Tensor<f32>> = self.model.parameters_mut();
        targets.extend(head_tensors.iter_mut());
        self.adam.step(&mut targets, &grads, &names, lr, self.iteration)?;
        if let (Some(h), [w, b]) = (self.head.as_mut(), head_tensors.as_slice()) {
            h.weight = w.item() as f64;
            h.bias = b.item() as f64;
        }
        Ok(())
    }

    fn validate_accuracy(&self, opts: &RunOptions<'_>, aug: &Augmentation) -> Result<Option<f64>> {
        match opts.validation {
            Some(eps) if !eps.is_empty() => Ok(Some(evaluate(&self.model, eps, LayerId::Fc, aug, self.scoring())?.mean)),
            _ => Ok(None),
        }
    }

    fn save(&self, opts: &RunOptions<'_>) -> Result<()> {
        if let Some(dir) = opts.out_dir {
            self.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
        }
        Ok(())
    }
}

fn fresh_adam(model: &EmbeddingModel<f32>, siamese: bool) -> Adam<f32> {
    let mut shapes: Vec<Vec<usize>> = model.parameters().iter().map(|(_, t)| t.shape().to_vec()).collect();
    if siamese {
        shapes.extend([Vec::new(), Vec::new()]);
    }
    Adam::new(shapes.iter().map(|s| s.as_slice()))
}

fn check_input(trainer: &Trainer, base: &ClassIndexedDataset, aug: &Augmentation) -> Result<()> {
    let shape = aug.output_shape(base.image_shape())?;
    if shape != trainer.model.arch().input_shape {
        return Err(Error::shape(format!(
            "dataset yields {shape:?} images but the model expects {:?}",
            trainer.model.arch().input_shape
        )));
    }
    Ok(())
}

enum Batch {
    Triplets(Tensor<f32>, usize),
    Pairs(Tensor<f32>, Vec<bool>),
}

fn drive(
    trainer: &mut Trainer,
    iterations: u64,
    lr_of: impl Fn(u64) -> f64,
    mut batch_for: impl FnMut(u64) -> Result<Batch>,
    cfg: &TrainConfig,
    aug: &Augmentation,
    opts: &RunOptions<'_>,
) -> Result<Vec<MetricsRow>> {
    let log = opts.out_dir.map(|d| MetricsLog::new(d.join(METRICS_FILE)));
    if let Some(log) = &log {
        log.append(&[])?;
    }
    let loss_cfg = cfg.loss();
    let mut rows = Vec::new();
    for step in 0..iterations {
        let started = Instant::now();
        let it = trainer.iteration;
        let lr = lr_of(step);
        let losses = match batch_for(step)? {
            Batch::Triplets(images, n) => trainer.triplet_step(images, n, &loss_cfg, lr)?,
            Batch::Pairs(images, labels) => trainer.pair_step(images, &labels, lr)?,
        };
        trainer.iteration += 1;
        let val_accuracy = if cfg.eval_every > 0 && trainer.iteration % cfg.eval_every == 0 {
            trainer.validate_accuracy(opts, aug)?
        } else {
            None
        };
        let wall_ms = if opts.deterministic { 0 } else { started.elapsed().as_millis() as u64 };
        let row = MetricsRow {
            iteration: it,
            lr,
            batch_loss: losses.batch,
            reg_loss: losses.regularizer,
            total_loss: losses.total,
            wall_ms,
            val_accuracy,
        };
        if let Some(log) = &log {
            log.append(std::slice::from_ref(&row))?;
        }
        if opts.log_every > 0 && (step + 1) % opts.log_every == 0 {
            match val_accuracy {
                Some(a) => info!("iter {it:>6}  lr {lr:.3e}  loss {:.5}  val {:.4}", losses.total, a),
                None => info!("iter {it:>6}  lr {lr:.3e}  loss {:.5}", losses.total),
            }
        }
        rows.push(row);
        if cfg.checkpoint_every > 0 && trainer.iteration % cfg.checkpoint_every == 0 {
            trainer.save(opts)?;
        }
    }
    trainer.save(opts)?;
    Ok(rows)
}

/// Triplet pre-training from `trainer.iteration` up to `cfg.max_iterations`.
pub fn train(
    trainer: &mut Trainer,
    base: &ClassIndexedDataset,
    aug: &Augmentation,
    cfg: &TrainConfig,
    opts: &RunOptions<'_>,
) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    check_input(trainer, base, aug)?;
    if trainer.head.is_some() {
        return Err(Error::Contract("use train_siamese for a model with a pairwise head".into()));
    }
    let start = trainer.iteration;
    let remaining = cfg.max_iterations.saturating_sub(start);
    let schedule = cfg.schedule();
    drive(
        trainer,
        remaining,
        |k| schedule.lr(start + k),
        |k| {
            let mut rng = rng::stream(cfg.seed, streams::TRIPLETS, start + k);
            let batch = sample_triplet_batch(base, cfg.batch_size, &mut rng)?;
            Ok(Batch::Triplets(batch.assemble(base, None, aug, cfg.augment_base, &mut rng)?, batch.len()))
        },
        cfg,
        aug,
        opts,
    )
}

/// Pairwise baseline under the same budget and batch count.
pub fn train_siamese(
    trainer: &mut Trainer,
    base: &ClassIndexedDataset,
    aug: &Augmentation,
    cfg: &TrainConfig,
    opts: &RunOptions<'_>,
) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    check_input(trainer, base, aug)?;
    if trainer.head.is_none() {
        return Err(Error::Contract("pairwise training needs a model with a pairwise head".into()));
    }
    let start = trainer.iteration;
    let remaining = cfg.max_iterations.saturating_sub(start);
    let schedule = cfg.schedule();
    drive(
        trainer,
        remaining,
        |k| schedule.lr(start + k),
        |k| {
            let mut rng = rng::stream(cfg.seed, streams::PAIRS, start + k);
            let batch = sample_pair_batch(base, cfg.batch_size, &mut rng)?;
            Ok(Batch::Pairs(batch.assemble(base, aug, cfg.augment_base, &mut rng)?, batch.labels()))
        },
        cfg,
        aug,
        opts,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub iterations: u64,
    /// Iteration the learning-rate schedule resumes from; defaults to the
    /// checkpoint's iteration count.
    #[serde(default)]
    pub lr_start_iteration: Option<u64>,
}

/// Fine-tuning on batches that mix base triplets and synthetic one-shot
/// triplets with equal probability. Batch size, schedule, loss and seed come
/// from `cfg`; `cfg.max_iterations` is ignored.
pub fn finetune(
    trainer: &mut Trainer,
    base: &ClassIndexedDataset,
    oneshot: &OneShotSet,
    aug: &Augmentation,
    cfg: &TrainConfig,
    ft: &FinetuneConfig,
    opts: &RunOptions<'_>,
) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    check_input(trainer, base, aug)?;
    if trainer.head.is_some() {
        return Err(Error::Contract("fine-tuning is defined for triplet models only".into()));
    }
    if oneshot.len() < 2 {
        return Err(Error::Precondition(format!(
            "fine-tuning needs one-shot instances of at least 2 classes, got {}",
            oneshot.len()
        )));
    }
    if oneshot.image_shape() != base.image_shape() {
        return Err(Error::shape(format!(
            "one-shot images are {:?} but base images are {:?}",
            oneshot.image_shape(),
            base.image_shape()
        )));
    }
    if ft.iterations == 0 {
        return Ok(Vec::new());
    }
    let lr_start = ft.lr_start_iteration.unwrap_or(trainer.iteration);
    let schedule = cfg.schedule();
    drive(
        trainer,
        ft.iterations,
        |k| schedule.lr(lr_start + k),
        |k| {
            let mut rng = rng::stream(cfg.seed, streams::FINETUNE, k);
            let batch = sample_finetune_batch(base, oneshot, cfg.batch_size, &mut rng)?;
            Ok(Batch::Triplets(batch.assemble(base, Some(oneshot), aug, cfg.augment_base, &mut rng)?, batch.len()))
        },
        cfg,
        aug,
        opts,
    )
}
