//! Evaluates the triplet ranking loss, its batch mean, the embedding
//! regularizer and the pairwise baseline loss on hand-sized inputs.
//!
//! cargo run --example triplet_losses

use tripnet::loss::{
    batch_triplet_loss, embedding_regularizer, siamese_pair_loss, total_loss, triplet_loss, EmbeddedTriplet,
    LossConfig, SiameseHead,
};

fn main() -> tripnet::Result<()> {
    let m = 2.0;
    println!("separated    {}", triplet_loss(&[0.0], &[0.0], &[2.0], m)?);
    println!("collapsed    {}", triplet_loss(&[0.7, 0.1], &[0.7, 0.1], &[0.7, 0.1], m)?);
    println!("hand example {}", triplet_loss(&[0.0], &[1.0], &[1.0], m)?);

    let (p, q, n) = ([1.0, 0.0], [0.0, 1.0], [1.0, 1.0]);
    let (a, b, c) = ([0.0, 0.0], [0.1, 0.0], [3.0, 0.0]);
    let batch = [EmbeddedTriplet::new(&p, &q, &n)?, EmbeddedTriplet::new(&a, &b, &c)?];
    let cfg = LossConfig::default();
    println!("\nbatch loss   {:.4}", batch_triplet_loss(&batch, m)?);
    println!("regularizer  {:.4}", embedding_regularizer(&batch)?);
    println!("total        {:.4} (lambda {})", total_loss(&batch, &cfg)?, cfg.lambda);

    let head = SiameseHead::default();
    for (d, same) in [(0.0, true), (0.0, false), (3.0, true), (3.0, false)] {
        let loss = siamese_pair_loss(&head, &[0.0], &[f64::sqrt(d)], same)?;
        println!("pair distance {d}, same class {same:<5} -> loss {loss:.4}");
    }
    Ok(())
}
