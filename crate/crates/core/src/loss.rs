//! Triplet ranking objective, embedding-norm regularizer and the pairwise
//! Siamese baseline.
//!
//! Each objective exists twice: as a plain function over embedding slices
//! (used for probing and evaluation) and as a recorder on a [`Tape`] for
//! training. Both use squared Euclidean distance and a hinge whose
//! subgradient at the kink is 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{lit, Real, Tape, Var};

/// Distance between embeddings. Only squared Euclidean ships; any other
/// differentiable distance would slot in here.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    SquaredEuclidean,
}

impl Distance {
    pub fn eval<T: Real>(self, a: &[T], b: &[T]) -> T {
        match self {
            Distance::SquaredEuclidean => squared_euclidean(a, b),
        }
    }
}

fn default_margin() -> f64 {
    2.0
}

fn default_lambda() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Weight of the embedding-norm regularizer.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub distance: Distance,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { margin: default_margin(), lambda: default_lambda(), distance: Distance::default() }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }
}

pub fn squared_euclidean<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y))
}

fn squared_norm<T: Real>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |s, &x| s + x * x)
}

fn hinge<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Embeddings of one `(positive, positive, negative)` triple.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddedTriplet<'a, T> {
    pub pos1: &'a [T],
    pub pos2: &'a [T],
    pub neg: &'a [T],
}

impl<'a, T: Real> EmbeddedTriplet<'a, T> {
    pub fn new(pos1: &'a [T], pos2: &'a [T], neg: &'a [T]) -> Result<Self> {
        if pos1.len() != pos2.len() || pos1.len() != neg.len() {
            return Err(Error::shape(format!(
                "triplet embeddings of lengths {}, {}, {}",
                pos1.len(),
                pos2.len(),
                neg.len()
            )));
        }
        Ok(Self { pos1, pos2, neg })
    }
}

/// `[m + d(p1,p2) - d(p1,n)]+ + [m + d(p1,p2) - d(p2,n)]+`
pub fn triplet_loss<T: Real>(pos1: &[T], pos2: &[T], neg: &[T], margin: T) -> Result<T> {
    let t = EmbeddedTriplet::new(pos1, pos2, neg)?;
    Ok(triplet_term(&t, margin))
}

fn triplet_term<T: Real>(t: &EmbeddedTriplet<'_, T>, margin: T) -> T {
    let intra = squared_euclidean(t.pos1, t.pos2);
    hinge(margin + intra - squared_euclidean(t.pos1, t.neg))
        + hinge(margin + intra - squared_euclidean(t.pos2, t.neg))
}

fn non_empty<T>(batch: &[T]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("loss over an empty batch".into()));
    }
    Ok(())
}

/// Mean triplet loss over a batch.
pub fn batch_triplet_loss<T: Real>(batch: &[EmbeddedTriplet<'_, T>], margin: T) -> Result<T> {
    non_empty(batch)?;
    let s = batch.iter().fold(T::zero(), |s, t| s + triplet_term(t, margin));
    Ok(s / lit(batch.len() as f64))
}

/// Mean over triplets of `|p|^2 + |p'|^2 + |n|^2`.
pub fn embedding_regularizer<T: Real>(batch: &[EmbeddedTriplet<'_, T>]) -> Result<T> {
    non_empty(batch)?;
    let s = batch
        .iter()
        .fold(T::zero(), |s, t| s + (squared_norm(t.pos1) + squared_norm(t.pos2) + squared_norm(t.neg)));
    Ok(s / lit(batch.len() as f64))
}

/// Batch triplet loss plus `lambda` times the regularizer.
pub fn total_loss<T: Real>(batch: &[EmbeddedTriplet<'_, T>], cfg: &LossConfig) -> Result<T> {
    cfg.validate()?;
    let b = batch_triplet_loss(batch, lit(cfg.margin))?;
    let r = embedding_regularizer(batch)?;
    Ok(b + lit::<T>(cfg.lambda) * r)
}

/// Linear layer + sigmoid on the embedding distance of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiameseHead {
    pub weight: f64,
    pub bias: f64,
}

impl Default for SiameseHead {
    /// Larger distance starts out meaning lower same-class probability.
    fn default() -> Self {
        Self { weight: -1.0, bias: 0.0 }
    }
}

impl SiameseHead {
    /// Probability that the pair shares a class.
    pub fn same_probability<T: Real>(&self, a: &[T], b: &[T]) -> T {
        let d = squared_euclidean(a, b);
        crate::tensor::sigmoid(lit::<T>(self.weight) * d + lit(self.bias))
    }
}

/// Binary cross-entropy of the head's same-class probability against the label.
pub fn siamese_pair_loss<T: Real>(head: &SiameseHead, a: &[T], b: &[T], same_class: bool) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("pair embeddings of lengths {} and {}", a.len(), b.len())));
    }
    let z = lit::<T>(head.weight) * squared_euclidean(a, b) + lit(head.bias);
    let y = if same_class { T::one() } else { T::zero() };
    Ok(z.max(T::zero()) - y * z + (T::one() + (-z.abs()).exp()).ln())
}

/// Loss terms recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TapedLoss {
    pub total: Var,
    pub triplet: Var,
    pub regularizer: Var,
}

fn squared_distance_rows<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let sq = tape.square(diff);
    Ok(tape.sum_last(sq))
}

/// Records the regularized triplet loss for embeddings laid out as
/// `[pos1 rows; pos2 rows; neg rows]`, `triplets` rows each.
pub fn record_total_loss<T: Real>(
    tape: &mut Tape<T>,
    embeddings: Var,
    triplets: usize,
    cfg: &LossConfig,
) -> Result<TapedLoss> {
    cfg.validate()?;
    if triplets == 0 {
        return Err(Error::InsufficientData("loss over an empty batch".into()));
    }
    if tape.value(embeddings).shape().len() != 2 || tape.value(embeddings).shape()[0] != 3 * triplets {
        return Err(Error::shape(format!(
            "expected [{}, D] triplet embeddings, got {:?}",
            3 * triplets,
            tape.value(embeddings).shape()
        )));
    }
    let p1 = tape.slice_rows(embeddings, 0, triplets)?;
    let p2 = tape.slice_rows(embeddings, triplets, triplets)?;
    let n = tape.slice_rows(embeddings, 2 * triplets, triplets)?;

    let d12 = squared_distance_rows(tape, p1, p2)?;
    let d1n = squared_distance_rows(tape, p1, n)?;
    let d2n = squared_distance_rows(tape, p2, n)?;
    let margin = lit::<T>(cfg.margin);
    let a = tape.sub(d12, d1n)?;
    let a = tape.add_scalar(a, margin);
    let a = tape.relu(a);
    let b = tape.sub(d12, d2n)?;
    let b = tape.add_scalar(b, margin);
    let b = tape.relu(b);
    let per_triplet = tape.add(a, b)?;
    let triplet = tape.mean(per_triplet);

    let all_sq = tape.square(embeddings);
    let norms = tape.sum_last(all_sq);
    // mean over triplets of the three norms == 3 * mean over all rows
    let mean_norm = tape.mean(norms);
    let regularizer = tape.scale(mean_norm, lit(3.0));

    let weighted = tape.scale(regularizer, lit(cfg.lambda));
    let total = tape.add(triplet, weighted)?;
    Ok(TapedLoss { total, triplet, regularizer })
}

/// Records the mean pairwise loss for embeddings laid out as `[a rows; b rows]`.
/// `weight` and `bias` are single-element trainable tensors of the head.
pub fn record_siamese_loss<T: Real>(
    tape: &mut Tape<T>,
    embeddings: Var,
    same_class: &[bool],
    weight: Var,
    bias: Var,
) -> Result<Var> {
    let pairs = same_class.len();
    if pairs == 0 {
        return Err(Error::InsufficientData("loss over an empty batch".into()));
    }
    let a = tape.slice_rows(embeddings, 0, pairs)?;
    let b = tape.slice_rows(embeddings, pairs, pairs)?;
    let d = squared_distance_rows(tape, a, b)?;
    let z = tape.scalar_affine(d, weight, bias)?;
    let targets: Vec<T> = same_class.iter().map(|&s| if s { T::one() } else { T::zero() }).collect();
    let l = tape.sigmoid_bce(z, &targets)?;
    Ok(tape.mean(l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn well_separated_triplet_has_zero_loss() {
        assert_eq!(triplet_loss(&[0.0], &[0.0], &[2.0], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn coincident_triplet_costs_two_margins() {
        let v = [0.3, -1.0, 2.0];
        assert_eq!(triplet_loss(&v, &v, &v, 2.0).unwrap(), 4.0);
    }

    #[test]
    fn hand_evaluated_triplet() {
        // [2+1-1]+ + [2+1-0]+
        assert_eq!(triplet_loss(&[0.0], &[1.0], &[1.0], 2.0).unwrap(), 5.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(triplet_loss(&[0.0, 1.0], &[1.0], &[1.0], 2.0).is_err());
        assert!(siamese_pair_loss(&SiameseHead::default(), &[0.0], &[0.0, 1.0], true).is_err());
    }

    #[test]
    fn batch_mean_of_zero_and_four() {
        let z = [0.0];
        let far = [2.0];
        let same = [1.0, 1.0];
        let batch = [
            EmbeddedTriplet::new(&z[..], &z[..], &far[..]).unwrap(),
            EmbeddedTriplet::new(&same[..], &same[..], &same[..]).unwrap(),
        ];
        assert_eq!(batch_triplet_loss(&batch, 2.0).unwrap(), 2.0);
        assert_eq!(batch_triplet_loss(&batch[..1], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn empty_batches_are_errors() {
        let empty: [EmbeddedTriplet<'_, f64>; 0] = [];
        assert!(batch_triplet_loss(&empty, 2.0).is_err());
        assert!(embedding_regularizer(&empty).is_err());
    }

    #[test]
    fn regularizer_hand_example() {
        let (p, q, n) = ([1.0, 0.0], [0.0, 1.0], [1.0, 1.0]);
        let batch = [EmbeddedTriplet::new(&p[..], &q[..], &n[..]).unwrap()];
        assert_eq!(embedding_regularizer(&batch).unwrap(), 4.0);
        let zeros = [0.0, 0.0];
        let zb = [EmbeddedTriplet::new(&zeros[..], &zeros[..], &zeros[..]).unwrap()];
        assert_eq!(embedding_regularizer(&zb).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_is_linear_combination() {
        let (p, q, n) = ([1.0, 0.0], [0.0, 1.0], [1.0, 1.0]);
        let batch = [EmbeddedTriplet::new(&p[..], &q[..], &n[..]).unwrap()];
        let b = batch_triplet_loss(&batch, 2.0).unwrap();
        let cfg0 = LossConfig { lambda: 0.0, ..Default::default() };
        assert_eq!(total_loss(&batch, &cfg0).unwrap(), b);
        let cfg1 = LossConfig { lambda: 1.0, ..Default::default() };
        assert_eq!(total_loss(&batch, &cfg1).unwrap(), b + 4.0);
    }

    #[test]
    fn invalid_loss_config() {
        assert!(LossConfig { margin: 0.0, ..Default::default() }.validate().is_err());
        assert!(LossConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn siamese_examples() {
        let zero_head = SiameseHead { weight: 0.0, bias: 0.0 };
        let l = siamese_pair_loss(&zero_head, &[1.0, 5.0], &[-2.0, 0.0], true).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let head = SiameseHead::default();
        assert_eq!(head.same_probability(&[0.4, 0.1], &[0.4, 0.1]), 0.5);
        let l = siamese_pair_loss::<f64>(&head, &[0.0], &[1.0], true).unwrap();
        assert!((l - 1.3132616875182228).abs() < 1e-12);
    }

    #[test]
    fn taped_loss_matches_plain_loss() {
        let rows: Vec<f64> = (0..18).map(|i| ((i * 37 % 13) as f64 - 6.0) / 4.0).collect();
        let emb = Tensor::new(vec![6, 3], rows.clone()).unwrap();
        let cfg = LossConfig { lambda: 0.25, ..Default::default() };
        let mut tape = Tape::new();
        let e = tape.constant(emb.clone());
        let l = record_total_loss(&mut tape, e, 2, &cfg).unwrap();
        let r = |i: usize| &rows[i * 3..i * 3 + 3];
        let batch = [
            EmbeddedTriplet::new(r(0), r(2), r(4)).unwrap(),
            EmbeddedTriplet::new(r(1), r(3), r(5)).unwrap(),
        ];
        let plain = total_loss(&batch, &cfg).unwrap();
        assert!((tape.value(l.total).item() - plain).abs() < 1e-12);
        assert!((tape.value(l.regularizer).item() - embedding_regularizer(&batch).unwrap()).abs() < 1e-12);
    }
}
