//! The block-structured embedding CNN.

mod arch;
mod model;

pub use arch::{ArchConfig, BlockSpec, LayerId};
pub use model::{BatchNorm, ConvLayer, EmbeddingModel, Mode};
