//! Builds both architecture presets, prints their shape chains and layer
//! names, and embeds a batch with the small one.
//!
//! cargo run --release --example embedding_network

use tripnet::net::{ArchConfig, EmbeddingModel, LayerId};
use tripnet::tensor::Tensor;

fn describe(name: &str, arch: &ArchConfig) {
    let chain: Vec<String> = arch.spatial_chain().iter().map(|(h, w)| format!("{h}x{w}")).collect();
    let (c, h, w) = arch.final_feature_shape();
    println!("{name}: input {:?}", arch.input_shape);
    println!("  block extents {}", chain.join(" -> "));
    println!("  final conv output {h}x{w}x{c}, flattened {}", arch.flat_dim());
    println!("  embedding {}, {} parameters", arch.embedding_dim, arch.parameter_count());
    let names: Vec<String> = arch.layer_names().iter().map(LayerId::to_string).collect();
    println!("  layers {}", names.join(" "));
}

fn main() -> tripnet::Result<()> {
    describe("full", &ArchConfig::full(1));
    describe("small", &ArchConfig::small());

    let mut model = EmbeddingModel::<f32>::build(ArchConfig::small())?;
    model.he_init(42);
    let images = Tensor::new(vec![3, 1, 28, 28], (0..3 * 28 * 28).map(|i| ((i * 7919) % 97) as f32 / 97.0).collect())?;
    let emb = model.embed(&images)?;
    println!("\nsmall-preset embeddings {:?}", emb.shape());
    for i in 0..3 {
        let row = emb.row(i);
        let active = row.iter().filter(|&&v| v > 0.0).count();
        println!("  image {i}: |h|^2 = {:.3}, {active} active units", row.iter().map(|v| v * v).sum::<f32>());
    }
    for layer in ["conv-1-1", "conv-4-2", "fc-1"] {
        let f = model.layer_features(&images, layer.parse()?)?;
        println!("  {layer} features {:?}", f.shape());
    }
    Ok(())
}
