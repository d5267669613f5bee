//! Batch samplers. A sampler only chooses which stored images go where;
//! [`TripletBatch::assemble`] turns the plan into pixels, applying the
//! augmentation with its own generator.

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use super::augment::Augmentation;
use super::dataset::{stack_images, ClassId, ClassIndexedDataset, ImageShape, OneShotSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ImageRef {
    Base { class: ClassId, index: usize },
    OneShot { class: ClassId },
}

impl ImageRef {
    pub fn class(&self) -> ClassId {
        match *self {
            ImageRef::Base { class, .. } | ImageRef::OneShot { class } => class,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Base,
    /// `(x_k, A(x_k), x_j)` built from one-shot instances.
    OneShotSynthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub pos1: ImageRef,
    pub pos2: ImageRef,
    pub neg: ImageRef,
    pub source: Source,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn one_shot_count(&self) -> usize {
        self.triplets.iter().filter(|t| t.source == Source::OneShotSynthetic).count()
    }

    /// Images as `[3B, C, H, W]`: all first positives, then all second
    /// positives, then all negatives.
    ///
    /// Base images go through `aug` when `augment_base` is set. In one-shot
    /// triplets only the second positive is augmented; the anchor and
    /// negative keep their evaluation view.
    pub fn assemble<R: Rng + ?Sized>(
        &self,
        base: &ClassIndexedDataset,
        oneshot: Option<&OneShotSet>,
        aug: &Augmentation,
        augment_base: bool,
        rng: &mut R,
    ) -> Result<Tensor<f32>> {
        let stored = base.image_shape();
        let out_shape = aug.output_shape(stored)?;
        let mut images = Vec::with_capacity(3 * self.len());
        let slots: [fn(&Triplet) -> ImageRef; 3] = [|t| t.pos1, |t| t.pos2, |t| t.neg];
        for (slot, pick) in slots.iter().enumerate() {
            for t in &self.triplets {
                let r = pick(t);
                let augmented = match t.source {
                    Source::Base => augment_base,
                    Source::OneShotSynthetic => slot == 1,
                };
                images.push(render(r, base, oneshot, stored, aug, augmented, rng)?);
            }
        }
        stack_images(&images, out_shape)
    }
}

fn render<R: Rng + ?Sized>(
    r: ImageRef,
    base: &ClassIndexedDataset,
    oneshot: Option<&OneShotSet>,
    shape: ImageShape,
    aug: &Augmentation,
    augmented: bool,
    rng: &mut R,
) -> Result<Vec<f32>> {
    let pixels = match r {
        ImageRef::Base { class, index } => base.image(class, index)?,
        ImageRef::OneShot { class } => oneshot
            .ok_or_else(|| Error::Precondition("one-shot reference without a one-shot set".into()))?
            .image(class)?,
    };
    if augmented {
        aug.apply(pixels, shape, rng)
    } else {
        aug.eval_view(pixels, shape)
    }
}

fn check_base(base: &ClassIndexedDataset) -> Result<()> {
    if base.num_classes() < 2 {
        return Err(Error::InsufficientData(format!(
            "sampling needs at least 2 classes, the dataset has {}",
            base.num_classes()
        )));
    }
    if base.classes().iter().all(|c| c.len() < 2) {
        return Err(Error::InsufficientData("no class has 2 instances to form a positive pair".into()));
    }
    Ok(())
}

/// Uniform class with at least two instances. Classes with fewer are redrawn.
fn positive_class<R: Rng + ?Sized>(base: &ClassIndexedDataset, rng: &mut R) -> usize {
    loop {
        let c = rng.random_range(0..base.num_classes());
        if base.classes()[c].len() >= 2 {
            return c;
        }
    }
}

/// Uniform index in `0..n` other than `exclude`.
fn other_than<R: Rng + ?Sized>(n: usize, exclude: usize, rng: &mut R) -> usize {
    let j = rng.random_range(0..n - 1);
    if j >= exclude {
        j + 1
    } else {
        j
    }
}

fn base_triplet<R: Rng + ?Sized>(base: &ClassIndexedDataset, rng: &mut R) -> Triplet {
    let classes = base.classes();
    let c = positive_class(base, rng);
    let pair = sample_indices(rng, classes[c].len(), 2);
    let n = other_than(classes.len(), c, rng);
    let neg_index = rng.random_range(0..classes[n].len());
    Triplet {
        pos1: ImageRef::Base { class: classes[c].id, index: pair.index(0) },
        pos2: ImageRef::Base { class: classes[c].id, index: pair.index(1) },
        neg: ImageRef::Base { class: classes[n].id, index: neg_index },
        source: Source::Base,
    }
}

/// Triplets drawn independently and uniformly across classes.
pub fn sample_triplet_batch<R: Rng + ?Sized>(
    base: &ClassIndexedDataset,
    size: usize,
    rng: &mut R,
) -> Result<TripletBatch> {
    check_base(base)?;
    Ok(TripletBatch { triplets: (0..size).map(|_| base_triplet(base, rng)).collect() })
}

/// Each triplet is a base triplet or, with probability 1/2, a synthetic
/// one-shot triplet `(x_k, A(x_k), x_j)` with `k != j`.
pub fn sample_finetune_batch<R: Rng + ?Sized>(
    base: &ClassIndexedDataset,
    oneshot: &OneShotSet,
    size: usize,
    rng: &mut R,
) -> Result<TripletBatch> {
    if oneshot.len() < 2 {
        return Err(Error::Precondition(format!(
            "fine-tuning needs one-shot instances of at least 2 classes, got {}",
            oneshot.len()
        )));
    }
    check_base(base)?;
    let ids = oneshot.class_ids();
    let mut triplets = Vec::with_capacity(size);
    for _ in 0..size {
        if rng.random_bool(0.5) {
            let k = rng.random_range(0..ids.len());
            let j = other_than(ids.len(), k, rng);
            triplets.push(Triplet {
                pos1: ImageRef::OneShot { class: ids[k] },
                pos2: ImageRef::OneShot { class: ids[k] },
                neg: ImageRef::OneShot { class: ids[j] },
                source: Source::OneShotSynthetic,
            });
        } else {
            triplets.push(base_triplet(base, rng));
        }
    }
    Ok(TripletBatch { triplets })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pair {
    pub a: ImageRef,
    pub b: ImageRef,
    pub same_class: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<Pair>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.same_class).collect()
    }

    /// Images as `[2B, C, H, W]`: all first elements, then all second elements.
    pub fn assemble<R: Rng + ?Sized>(
        &self,
        base: &ClassIndexedDataset,
        aug: &Augmentation,
        augment: bool,
        rng: &mut R,
    ) -> Result<Tensor<f32>> {
        let stored = base.image_shape();
        let mut images = Vec::with_capacity(2 * self.len());
        for p in &self.pairs {
            images.push(render(p.a, base, None, stored, aug, augment, rng)?);
        }
        for p in &self.pairs {
            images.push(render(p.b, base, None, stored, aug, augment, rng)?);
        }
        stack_images(&images, aug.output_shape(stored)?)
    }
}

/// `ceil(size/2)` same-class pairs followed by `floor(size/2)` different-class pairs.
pub fn sample_pair_batch<R: Rng + ?Sized>(base: &ClassIndexedDataset, size: usize, rng: &mut R) -> Result<PairBatch> {
    check_base(base)?;
    let classes = base.classes();
    let same = size.div_ceil(2);
    let mut pairs = Vec::with_capacity(size);
    for i in 0..size {
        if i < same {
            let c = positive_class(base, rng);
            let idx = sample_indices(rng, classes[c].len(), 2);
            pairs.push(Pair {
                a: ImageRef::Base { class: classes[c].id, index: idx.index(0) },
                b: ImageRef::Base { class: classes[c].id, index: idx.index(1) },
                same_class: true,
            });
        } else {
            let c = rng.random_range(0..classes.len());
            let d = other_than(classes.len(), c, rng);
            let ia = rng.random_range(0..classes[c].len());
            let ib = rng.random_range(0..classes[d].len());
            pairs.push(Pair {
                a: ImageRef::Base { class: classes[c].id, index: ia },
                b: ImageRef::Base { class: classes[d].id, index: ib },
                same_class: false,
            });
        }
    }
    Ok(PairBatch { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::{ClassEntry, Role};
    use crate::rng;
    use std::collections::BTreeMap;

    fn toy(classes: u32, per_class: usize) -> ClassIndexedDataset {
        let entries = (0..classes)
            .map(|c| ClassEntry::new(c * 10, format!("c{c}"), "", (0..per_class).map(|i| vec![c as f32, i as f32]).collect()))
            .collect();
        ClassIndexedDataset::new((1, 1, 2), Role::Base, entries).unwrap()
    }

    fn shots(n: u32) -> OneShotSet {
        let m: BTreeMap<ClassId, Vec<f32>> = (0..n).map(|c| (1000 + c, vec![c as f32, 0.5])).collect();
        OneShotSet::new((1, 1, 2), m).unwrap()
    }

    #[test]
    fn triplets_respect_class_constraints() {
        let d = toy(4, 3);
        let b = sample_triplet_batch(&d, 64, &mut rng::stream(0, 0, 0)).unwrap();
        assert_eq!(b.len(), 64);
        for t in &b.triplets {
            assert_eq!(t.pos1.class(), t.pos2.class());
            assert_ne!(t.pos1, t.pos2);
            assert_ne!(t.neg.class(), t.pos1.class());
        }
    }

    #[test]
    fn singleton_classes_are_never_positive() {
        let mut entries = toy(3, 2).classes().to_vec();
        entries.push(ClassEntry::new(99, "lonely", "", vec![vec![9.0, 9.0]]));
        let d = ClassIndexedDataset::new((1, 1, 2), Role::Base, entries).unwrap();
        let b = sample_triplet_batch(&d, 500, &mut rng::stream(1, 0, 0)).unwrap();
        assert!(b.triplets.iter().all(|t| t.pos1.class() != 99));
        assert!(b.triplets.iter().any(|t| t.neg.class() == 99));
    }

    #[test]
    fn degenerate_datasets_error() {
        assert!(sample_triplet_batch(&toy(1, 5), 4, &mut rng::stream(0, 0, 0)).is_err());
        assert!(sample_triplet_batch(&toy(3, 1), 4, &mut rng::stream(0, 0, 0)).is_err());
        assert!(sample_finetune_batch(&toy(3, 2), &shots(1), 4, &mut rng::stream(0, 0, 0)).is_err());
    }

    #[test]
    fn one_shot_triplets_pair_a_shot_with_its_augmentation() {
        let b = sample_finetune_batch(&toy(3, 2), &shots(5), 200, &mut rng::stream(2, 0, 0)).unwrap();
        let mut seen = 0;
        for t in b.triplets.iter().filter(|t| t.source == Source::OneShotSynthetic) {
            seen += 1;
            assert_eq!(t.pos1, t.pos2);
            assert!(matches!(t.neg, ImageRef::OneShot { .. }));
            assert_ne!(t.neg.class(), t.pos1.class());
        }
        assert!(seen > 0);
    }

    #[test]
    fn pair_labels_split_half_and_half() {
        let d = toy(4, 3);
        for size in [1, 6, 7] {
            let b = sample_pair_batch(&d, size, &mut rng::stream(0, 0, size as u64)).unwrap();
            let same = b.labels().iter().filter(|&&s| s).count();
            assert_eq!(same, size.div_ceil(2));
            for p in &b.pairs {
                assert_eq!(p.same_class, p.a.class() == p.b.class());
                assert_ne!(p.a, p.b);
            }
        }
    }

    #[test]
    fn assembly_lays_out_slots_in_blocks() {
        let d = toy(3, 2);
        let b = sample_triplet_batch(&d, 5, &mut rng::stream(4, 0, 0)).unwrap();
        let t = b.assemble(&d, None, &Augmentation::None, true, &mut rng::stream(4, 1, 0)).unwrap();
        assert_eq!(t.shape(), &[15, 1, 1, 2]);
        for (i, tr) in b.triplets.iter().enumerate() {
            assert_eq!(t.row(i)[0] as u32 * 10, tr.pos1.class());
            assert_eq!(t.row(10 + i)[0] as u32 * 10, tr.neg.class());
        }
    }
}
