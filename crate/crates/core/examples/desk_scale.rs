//! The full laptop-sized protocol: triplet pre-training against the pairwise
//! baseline, per-episode fine-tuning and the layer sweep, over several seeds.
//!
//! Uses Omniglot when OMNIGLOT_ROOT is set (background set at 28x28, the
//! validation alphabets as novel classes); otherwise a synthetic stand-in of
//! 600 base and 100 novel glyph classes.
//!
//! cargo run --release --example desk_scale -- [iterations] [seeds]

use tripnet::data::synthetic::{generate, GlyphSpec};
use tripnet::data::Role;
use tripnet::experiment::{median, omniglot_background_split, run_desk, DeskProtocol};

fn main() -> tripnet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let mut protocol = DeskProtocol::default();
    if let Some(it) = args.next() {
        protocol.train.max_iterations = it.parse().expect("iterations");
    }
    let seeds: u64 = args.next().map_or(1, |a| a.parse().expect("seed count"));

    let (base, novel) = match std::env::var_os("OMNIGLOT_ROOT") {
        Some(root) => omniglot_background_split(root.as_ref(), 28)?,
        None => {
            let spec = GlyphSpec { classes: 600, ..Default::default() };
            (generate(&spec, 0, Role::Base, 1)?, generate(&GlyphSpec { classes: 100, ..spec }, 10_000, Role::Novel, 2)?)
        }
    };
    println!("{} base classes, {} novel classes", base.num_classes(), novel.num_classes());

    let mut outcomes = Vec::new();
    for seed in 0..seeds {
        let o = run_desk(&base, &novel, &protocol, seed)?;
        println!("seed {seed}: triplet {:.3}, pairwise {:.3}, fine-tune {:.3} -> {:.3}", o.triplet, o.siamese, o.before_finetune, o.after_finetune);
        for (layer, acc) in &o.layers {
            println!("  {layer:>9} {acc:.3}");
        }
        outcomes.push(o);
    }
    let gain: Vec<f64> = outcomes.iter().map(|o| o.after_finetune - o.before_finetune).collect();
    println!("median fine-tuning gain {:+.3}", median(&gain));
    Ok(())
}
