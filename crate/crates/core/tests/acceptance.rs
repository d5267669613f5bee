//! One pass/fail line per acceptance criterion. Runs without the libtest
//! harness so the lines show up in plain `cargo test` output. Exits non-zero
//! if a criterion that could run failed.
//!
//! Criteria 6 to 8 train on real Omniglot and only run when `OMNIGLOT_ROOT`
//! points at a directory holding `images_background`. Without it they print a
//! FAIL line marked as blocked; the synthetic-glyph stand-in lives in
//! `tests/desk_proxy.rs` and `examples/desk_scale.rs`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use tempfile::TempDir;

use tripnet::data::sampler::{sample_finetune_batch, sample_triplet_batch};
use tripnet::data::synthetic::{generate, GlyphSpec};
use tripnet::data::{OneShotSet, Role};
use tripnet::experiment::{median, omniglot_background_split, run_desk, DeskOutcome, DeskProtocol};
use tripnet::loss::{batch_triplet_loss, embedding_regularizer, total_loss, triplet_loss, EmbeddedTriplet, LossConfig};
use tripnet::net::{ArchConfig, BlockSpec, EmbeddingModel, LayerId, Mode};
use tripnet::optim::{Adam, LrSchedule};
use tripnet::rng;
use tripnet::tensor::gradcheck::{grad_check, DEFAULT_STEP};
use tripnet::tensor::{Tape, Tensor};

fn report(n: u32, name: &str, pass: bool, detail: impl AsRef<str>) {
    println!("criterion {n} [{name}]: {} ({})", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
}

fn randn(shape: Vec<usize>, r: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(r)).collect()).unwrap()
}

fn c1_gradient_correctness() -> Option<bool> {
    let started = Instant::now();
    let cfg = LossConfig { lambda: 0.05, ..Default::default() };
    let mut worst: f64 = 0.0;
    let mut nets = 0;
    let mut zeros = 0;
    let mut attempts = 0;
    let mut r = rng::stream(11, 0, 0);
    while nets < 20 {
        attempts += 1;
        assert!(attempts < 2000, "could not find kink-free points");
        let channels = r.random_range(1..=2);
        let side = r.random_range(4..=6);
        let arch = ArchConfig {
            input_shape: (channels, side, side),
            blocks: vec![BlockSpec::from((1, r.random_range(2..=3))), BlockSpec::from((1, r.random_range(2..=3)))],
            embedding_dim: r.random_range(3..=5),
            batch_norm: true,
        };
        let mut model = EmbeddingModel::<f64>::build(arch).unwrap();
        model.he_init(r.random());
        let triplets = 2;
        let images = randn(vec![3 * triplets, channels, side, side], &mut r);
        let params: Vec<Tensor<f64>> = model.parameters().into_iter().map(|(_, t)| t.clone()).collect();
        let mut build = |tape: &mut Tape<f64>, vars: &[tripnet::tensor::Var]| {
            let x = tape.constant(images.clone());
            let e = model.forward(tape, vars, x, Mode::Train)?;
            Ok(tripnet::loss::record_total_loss(tape, e, triplets, &cfg)?.total)
        };
        let mut probe = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| probe.param(p.clone())).collect();
        build(&mut probe, &vars).unwrap();
        if probe.kink_margin() < 2e-3 {
            continue;
        }
        let g = grad_check(&params, DEFAULT_STEP, build).unwrap();
        worst = worst.max(g.max_rel_error);
        zeros += g.zeros;
        nets += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = worst < 1e-5 && secs < 120.0;
    report(1, "gradient correctness", pass, format!("{nets} nets, max rel error {worst:.2e}, {zeros} zero-gradient entries, {secs:.1}s"));
    Some(pass)
}

fn brute_triplet(p1: &[f64], p2: &[f64], n: &[f64], m: f64) -> f64 {
    let mut d12 = 0.0;
    let mut d1n = 0.0;
    let mut d2n = 0.0;
    for k in 0..p1.len() {
        d12 += (p1[k] - p2[k]) * (p1[k] - p2[k]);
        d1n += (p1[k] - n[k]) * (p1[k] - n[k]);
        d2n += (p2[k] - n[k]) * (p2[k] - n[k]);
    }
    f64::max(0.0, m + d12 - d1n) + f64::max(0.0, m + d12 - d2n)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn c2_loss_oracle_equivalence() -> Option<bool> {
    let mut r = rng::stream(12, 0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let b = r.random_range(1..=16);
        let d = r.random_range(1..=12);
        let scale = r.random_range(0.1..3.0);
        let cfg = LossConfig { margin: r.random_range(0.5..4.0), lambda: r.random_range(0.0..0.1), ..Default::default() };
        let rows: Vec<[Vec<f64>; 3]> = (0..b)
            .map(|_| std::array::from_fn(|_| (0..d).map(|_| scale * r.random_range(-1.0..1.0)).collect()))
            .collect();
        let batch: Vec<EmbeddedTriplet<'_, f64>> =
            rows.iter().map(|[p, q, n]| EmbeddedTriplet::new(p, q, n).unwrap()).collect();

        let mut sum = 0.0;
        let mut reg = 0.0;
        for [p, q, n] in &rows {
            sum += brute_triplet(p, q, n, cfg.margin);
            for v in p.iter().chain(q).chain(n) {
                reg += v * v;
            }
        }
        let oracle_b = sum / b as f64;
        let oracle_r = reg / b as f64;
        let oracle_t = oracle_b + cfg.lambda * oracle_r;
        worst = worst
            .max(rel(batch_triplet_loss(&batch, cfg.margin).unwrap(), oracle_b))
            .max(rel(embedding_regularizer(&batch).unwrap(), oracle_r))
            .max(rel(total_loss(&batch, &cfg).unwrap(), oracle_t));
    }
    let v = [0.3, -1.2];
    let all_equal = triplet_loss(&v, &v, &v, 2.0).unwrap();
    let reg_case = embedding_regularizer(&[EmbeddedTriplet::new(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]).unwrap()]).unwrap();
    let hand = triplet_loss(&[0.0], &[1.0], &[1.0], 2.0).unwrap();
    let pass = worst < 1e-12 && all_equal == 4.0 && reg_case == 4.0 && hand == 5.0;
    report(
        2,
        "loss oracle equivalence",
        pass,
        format!("1000 batches, max rel error {worst:.2e}; p1=p2=n -> {all_equal}, regularizer case -> {reg_case}"),
    );
    Some(pass)
}

fn c3_shape_fidelity() -> Option<bool> {
    let arch = ArchConfig::full(1);
    let chain: Vec<usize> = arch.spatial_chain().iter().map(|&(h, _)| h).collect();
    let model = EmbeddingModel::<f32>::build(arch.clone()).unwrap();
    let image = Tensor::<f32>::full(vec![1, 1, 105, 105], 0.5);
    let emb = model.embed(&image).unwrap();
    let last = model.layer_features(&image, LayerId::Conv { block: 4, index: 3 }).unwrap();
    let first = model.layer_features(&image, LayerId::Conv { block: 1, index: 1 }).unwrap();
    let pass = chain == [105, 53, 27, 14]
        && arch.final_feature_shape() == (512, 14, 14)
        && emb.shape() == [1, 1024]
        && last.shape() == [1, 512]
        && first.shape() == [1, 64];
    report(
        3,
        "shape fidelity",
        pass,
        format!(
            "chain {chain:?}, final {:?}, embedding {:?}, {} parameters",
            arch.final_feature_shape(),
            emb.shape(),
            arch.parameter_count()
        ),
    );
    Some(pass)
}

fn c4_sampler_contracts() -> Option<bool> {
    let started = Instant::now();
    let spec = GlyphSpec { classes: 40, instances: 4, side: 4, ..Default::default() };
    let base = generate(&spec, 0, Role::Base, 3).unwrap();
    let k = base.num_classes();

    let mut pos = vec![0u64; k];
    let mut neg = vec![0u64; k];
    let draws = 100_000;
    let mut r = rng::stream(14, 0, 0);
    for _ in 0..draws / 100 {
        for t in sample_triplet_batch(&base, 100, &mut r).unwrap().triplets {
            pos[t.pos1.class() as usize] += 1;
            neg[t.neg.class() as usize] += 1;
        }
    }
    let chi2 = |counts: &[u64]| {
        let e = draws as f64 / k as f64;
        counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum::<f64>()
    };
    let critical = ChiSquared::new((k - 1) as f64).unwrap().inverse_cdf(0.99);
    let (chi_pos, chi_neg) = (chi2(&pos), chi2(&neg));

    let shots: std::collections::BTreeMap<_, _> =
        (0..5u32).map(|c| (1000 + c, vec![c as f32 / 5.0; 16])).collect();
    let oneshot = OneShotSet::new(base.image_shape(), shots).unwrap();
    let n = 10_000;
    let mut r = rng::stream(14, 1, 0);
    let one_shot: usize = (0..n / 50).map(|_| sample_finetune_batch(&base, &oneshot, 50, &mut r).unwrap().one_shot_count()).sum();
    let sigma = (n as f64 * 0.25).sqrt();
    let dev = (one_shot as f64 - n as f64 / 2.0).abs();
    let secs = started.elapsed().as_secs_f64();

    let pass = chi_pos < critical && chi_neg < critical && dev <= 3.0 * sigma && secs < 60.0;
    report(
        4,
        "sampler contracts",
        pass,
        format!(
            "chi2 positive {chi_pos:.1}, negative {chi_neg:.1}, critical {critical:.1} at 0.01; one-shot {one_shot}/{n}, |dev| {dev:.0} <= {:.0}",
            3.0 * sigma
        ),
    );
    Some(pass)
}

fn c5_schedule_and_optimizer() -> Option<bool> {
    let s = LrSchedule::default();
    let lrs = [s.lr(0), s.lr(10_000), s.lr(25_000)];
    let schedule_ok = lrs == [1e-4, 5e-5, 2.5e-5];

    let mut r = rng::stream(15, 0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p0 = randn(vec![7], &mut r);
        let g = randn(vec![7], &mut r);
        let lr = r.random_range(1e-5..1e-2);
        let mut p = p0.clone();
        let mut adam = Adam::<f64>::new([p.shape()]);
        adam.step(&mut [&mut p], &[&g], &["w".into()], lr, 0).unwrap();
        for i in 0..7 {
            let expected = p0.data()[i] - lr * g.data()[i] / (g.data()[i].abs() + adam.epsilon);
            worst = worst.max((p.data()[i] - expected).abs());
        }
    }
    let mut w = Tensor::<f64>::scalar(0.0);
    let mut adam = Adam::<f64>::new([w.shape()]);
    adam.step(&mut [&mut w], &[&Tensor::scalar(1.0)], &["w".into()], 1e-4, 0).unwrap();
    let unit = (w.item() + 1e-4 / (1.0 + 1e-8)).abs();
    let pass = schedule_ok && worst < 1e-10 && unit < 1e-10;
    report(5, "schedule and optimizer", pass, format!("lr {lrs:?}; first Adam step max deviation {:.1e}", worst.max(unit)));
    Some(pass)
}

const OMNIGLOT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Trained once and shared by criteria 6 to 8.
fn omniglot_outcomes() -> Option<&'static Vec<DeskOutcome>> {
    static CELL: OnceLock<Option<Vec<DeskOutcome>>> = OnceLock::new();
    CELL.get_or_init(|| {
        let root = PathBuf::from(std::env::var_os("OMNIGLOT_ROOT")?);
        if !root.join("images_background").is_dir() {
            return None;
        }
        let protocol = DeskProtocol::default();
        let (base, validation) = omniglot_background_split(&root, protocol.arch.input_shape.1).expect("Omniglot ingestion");
        Some(OMNIGLOT_SEEDS.iter().map(|&s| run_desk(&base, &validation, &protocol, s).expect("desk-scale run")).collect())
    })
    .as_ref()
}

fn blocked(n: u32, name: &str) -> Option<bool> {
    report(
        n,
        name,
        false,
        "blocked: OMNIGLOT_ROOT does not point at a directory with images_background; no Omniglot data in this environment",
    );
    None
}

fn c6_desk_scale_end_to_end() -> Option<bool> {
    let Some(outcomes) = omniglot_outcomes() else {
        return blocked(6, "desk-scale end-to-end");
    };
    let o = &outcomes[0];
    let pass = o.triplet >= 0.60 && o.triplet >= o.siamese;
    report(
        6,
        "desk-scale end-to-end",
        pass,
        format!("seed {}: triplet {:.4}, pairwise baseline {:.4}, chance 0.2", o.seed, o.triplet, o.siamese),
    );
    Some(pass)
}

fn c7_finetuning_direction() -> Option<bool> {
    let Some(outcomes) = omniglot_outcomes() else {
        return blocked(7, "fine-tuning direction");
    };
    let deltas: Vec<f64> = outcomes.iter().map(|o| o.after_finetune - o.before_finetune).collect();
    let m = median(&deltas);
    report(7, "fine-tuning direction", m >= 0.0, format!("median change {m:+.4} over {} seeds, {deltas:?}", deltas.len()));
    Some(m >= 0.0)
}

fn c8_layer_trend() -> Option<bool> {
    let Some(outcomes) = omniglot_outcomes() else {
        return blocked(8, "layer-wise trend");
    };
    let arch = DeskProtocol::default().arch;
    let names = arch.layer_names();
    let (first, last_conv) = (names[0].to_string(), names[names.len() - 2].to_string());
    let fc_vs_last = median(&outcomes.iter().map(|o| o.layer("fc-1").unwrap() - o.layer(&last_conv).unwrap()).collect::<Vec<_>>());
    let last_vs_first =
        median(&outcomes.iter().map(|o| o.layer(&last_conv).unwrap() - o.layer(&first).unwrap()).collect::<Vec<_>>());
    let pass = fc_vs_last >= 0.0 && last_vs_first >= 0.0;
    report(
        8,
        "layer-wise trend",
        pass,
        format!("median fc-1 - {last_conv} {fc_vs_last:+.4}, {last_conv} - {first} {last_vs_first:+.4}"),
    );
    Some(pass)
}

fn tripnet(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_tripnet")).args(args).current_dir(dir).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn c9_determinism() -> Option<bool> {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        r#"
seed = 21
[arch]
input_shape = [1, 12, 12]
blocks = [[1, 4], [1, 6]]
embedding_dim = 8
[data]
base = "glyphs.bin"
holdout_groups = ["set-03"]
[train]
max_iterations = 5
batch_size = 4
checkpoint_every = 2
[augmentation]
kind = "affine"
[finetune]
iterations = 3
[episodes]
way = 3
queries_per_class = 2
runs = 5
[project]
classes = [20, 21, 22]
"#,
    )
    .unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let cache = format!("{run}/glyphs.bin");
        tripnet(d, &["ingest", "synthetic", "--out", &cache, "--classes", "30", "--instances", "4", "--side", "12", "--seed", "2"]);
        let cfg = format!("{run}/run.toml");
        std::fs::copy(d.join("run.toml"), d.join(&cfg)).unwrap();
        let c = d.join(run);
        tripnet(&c, &["train", "-c", "run.toml", "--deterministic", "--out-dir", "base"]);
        tripnet(&c, &["finetune", "-c", "run.toml", "--deterministic", "--checkpoint", "base/checkpoint.bin", "--out-dir", "ft"]);
        tripnet(&c, &["eval", "-c", "run.toml", "--deterministic", "--out-dir", "base", "--layer", "conv-2-1"]);
        tripnet(&c, &["eval", "-c", "run.toml", "--deterministic", "--checkpoint", "ft/checkpoint.bin", "--out-dir", "ft"]);
        tripnet(&c, &["project", "-c", "run.toml", "--deterministic", "--out-dir", "base"]);
        files = vec![
            "glyphs.bin",
            "glyphs.bin.summary.txt",
            "base/metrics.csv",
            "base/checkpoint.bin",
            "base/train.resolved.toml",
            "base/eval-conv-2-1.csv",
            "base/projection.csv",
            "ft/metrics.csv",
            "ft/checkpoint.bin",
            "ft/eval-fc-1.csv",
        ];
    }
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(d.join("a").join(f)).unwrap() != std::fs::read(d.join("b").join(f)).unwrap())
        .collect();
    let pass = differing.is_empty();
    report(
        9,
        "determinism",
        pass,
        if pass { format!("{} outputs of ingest/train/finetune/eval/project byte-identical", files.len()) } else { format!("differing: {differing:?}") },
    );
    Some(pass)
}

fn main() {
    let criteria: [(u32, fn() -> Option<bool>); 9] = [
        (1, c1_gradient_correctness),
        (2, c2_loss_oracle_equivalence),
        (3, c3_shape_fidelity),
        (4, c4_sampler_contracts),
        (5, c5_schedule_and_optimizer),
        (6, c6_desk_scale_end_to_end),
        (7, c7_finetuning_direction),
        (8, c8_layer_trend),
        (9, c9_determinism),
    ];
    let mut failed = Vec::new();
    let mut blocked = Vec::new();
    for (n, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Some(true)) => {}
            Ok(Some(false)) => failed.push(n),
            Ok(None) => blocked.push(n),
            Err(_) => {
                report(n, "panicked", false, "see the message above");
                failed.push(n);
            }
        }
    }
    println!("acceptance: {} passed, failed {failed:?}, blocked {blocked:?}", 9 - failed.len() - blocked.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
