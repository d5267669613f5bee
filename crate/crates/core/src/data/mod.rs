//! Datasets, splits, augmentation and batch samplers.

pub mod augment;
pub mod cache;
mod dataset;
pub mod ingest;
pub mod sampler;
pub mod splits;
pub mod synthetic;

pub use augment::{AffineRanges, Augmentation, NaturalRanges};
pub use dataset::{image_numel, stack_images, ClassEntry, ClassId, ClassIndexedDataset, ImageShape, OneShotSet, Role};
pub use sampler::{ImageRef, Pair, PairBatch, Source, Triplet, TripletBatch};
