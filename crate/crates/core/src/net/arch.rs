use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::{pooled_extent, KERNEL};

/// Number of 3x3 conv layers in a block and the filter count they share.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct BlockSpec {
    pub convs: usize,
    pub filters: usize,
}

impl From<(usize, usize)> for BlockSpec {
    fn from((convs, filters): (usize, usize)) -> Self {
        Self { convs, filters }
    }
}

impl From<BlockSpec> for (usize, usize) {
    fn from(b: BlockSpec) -> Self {
        (b.convs, b.filters)
    }
}

fn default_true() -> bool {
    true
}

/// Block structure of the embedding CNN.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// `(channels, height, width)`
    pub input_shape: (usize, usize, usize),
    pub blocks: Vec<BlockSpec>,
    pub embedding_dim: usize,
    /// Batch norm after every convolution. Disabling it is only meant for ablations.
    #[serde(default = "default_true")]
    pub batch_norm: bool,
}

impl ArchConfig {
    /// Four blocks of (2, 2, 3, 3) conv layers with 64/128/256/512 filters on
    /// 105x105 inputs, producing a 1024-d embedding.
    pub fn full(channels: usize) -> Self {
        Self {
            input_shape: (channels, 105, 105),
            blocks: [(2, 64), (2, 128), (3, 256), (3, 512)].map(BlockSpec::from).to_vec(),
            embedding_dim: 1024,
            batch_norm: true,
        }
    }

    /// Laptop-sized variant with the same block/BN/ReLU/ceil-pool structure.
    pub fn small() -> Self {
        Self {
            input_shape: (1, 28, 28),
            blocks: [(1, 16), (1, 32), (2, 64), (2, 128)].map(BlockSpec::from).to_vec(),
            embedding_dim: 128,
            batch_norm: true,
        }
    }

    pub fn preset(name: &str, channels: Option<usize>) -> Result<Self> {
        match name {
            "full" | "paper" => Ok(Self::full(channels.unwrap_or(1))),
            "small" => {
                let mut a = Self::small();
                if let Some(c) = channels {
                    a.input_shape.0 = c;
                }
                Ok(a)
            }
            other => Err(Error::Config(format!("unknown architecture preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "input shape {:?} collapses to zero spatial extent",
                self.input_shape
            )));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("architecture needs at least one block".into()));
        }
        if let Some(b) = self.blocks.iter().find(|b| b.convs == 0 || b.filters == 0) {
            return Err(Error::Config(format!("block {b:?} needs >= 1 conv layer and >= 1 filter")));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        Ok(())
    }

    /// Spatial extent `(h, w)` seen by each block. Blocks after the first are
    /// preceded by a ceil-mode 2x2 pool.
    pub fn spatial_chain(&self) -> Vec<(usize, usize)> {
        let (_, mut h, mut w) = self.input_shape;
        let mut out = Vec::with_capacity(self.blocks.len());
        for i in 0..self.blocks.len() {
            if i > 0 {
                h = pooled_extent(h);
                w = pooled_extent(w);
            }
            out.push((h, w));
        }
        out
    }

    /// `(channels, h, w)` of the last conv layer's output, before flattening.
    pub fn final_feature_shape(&self) -> (usize, usize, usize) {
        let (h, w) = *self.spatial_chain().last().expect("validated arch has blocks");
        (self.blocks.last().unwrap().filters, h, w)
    }

    pub fn flat_dim(&self) -> usize {
        let (c, h, w) = self.final_feature_shape();
        c * h * w
    }

    /// Trainable parameter count: conv weights and biases, BN scale and
    /// shift, and the fully connected layer.
    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        let mut in_ch = self.input_shape.0;
        for b in &self.blocks {
            for _ in 0..b.convs {
                n += in_ch * KERNEL * KERNEL * b.filters + b.filters;
                if self.batch_norm {
                    n += 2 * b.filters;
                }
                in_ch = b.filters;
            }
        }
        n + self.flat_dim() * self.embedding_dim + self.embedding_dim
    }

    /// Ordered layer names: `conv-{block}-{index}` (1-based) then `fc-1`.
    pub fn layer_names(&self) -> Vec<LayerId> {
        let mut names: Vec<LayerId> = self
            .blocks
            .iter()
            .enumerate()
            .flat_map(|(b, spec)| (0..spec.convs).map(move |i| LayerId::Conv { block: b + 1, index: i + 1 }))
            .collect();
        names.push(LayerId::Fc);
        names
    }
}

/// Layer name following the `conv-3-2` / `fc-1` convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerId {
    Conv { block: usize, index: usize },
    Fc,
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerId::Conv { block, index } => write!(f, "conv-{block}-{index}"),
            LayerId::Fc => write!(f, "fc-1"),
        }
    }
}

impl FromStr for LayerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "fc-1" {
            return Ok(LayerId::Fc);
        }
        let parts: Vec<&str> = s.split('-').collect();
        match parts[..] {
            ["conv", b, i] => {
                let block = b.parse().map_err(|_| Error::UnknownLayer(s.into()))?;
                let index = i.parse().map_err(|_| Error::UnknownLayer(s.into()))?;
                if block == 0 || index == 0 {
                    return Err(Error::UnknownLayer(s.into()));
                }
                Ok(LayerId::Conv { block, index })
            }
            _ => Err(Error::UnknownLayer(s.into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_preset_shape_chain() {
        let a = ArchConfig::full(1);
        assert_eq!(a.spatial_chain(), vec![(105, 105), (53, 53), (27, 27), (14, 14)]);
        assert_eq!(a.final_feature_shape(), (512, 14, 14));
        assert_eq!(a.embedding_dim, 1024);
    }

    #[test]
    fn small_preset_shape_chain() {
        let a = ArchConfig::small();
        assert_eq!(a.spatial_chain(), vec![(28, 28), (14, 14), (7, 7), (4, 4)]);
        assert_eq!(a.embedding_dim, 128);
    }

    #[test]
    fn parameter_counts_are_fixed() {
        assert_eq!(ArchConfig::full(1).parameter_count(), 110_400_960);
        assert_eq!(ArchConfig::full(3).parameter_count(), 110_402_112);
        assert_eq!(ArchConfig::small().parameter_count(), 544_800);
    }

    #[test]
    fn layer_names_follow_block_index_convention() {
        let names: Vec<String> = ArchConfig::full(1).layer_names().iter().map(|l| l.to_string()).collect();
        assert_eq!(names.len(), 11);
        assert_eq!(names[0], "conv-1-1");
        assert_eq!(names[9], "conv-4-3");
        assert_eq!(names[10], "fc-1");
        for n in &names {
            assert_eq!(n.parse::<LayerId>().unwrap().to_string(), *n);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut a = ArchConfig::small();
        a.input_shape = (1, 0, 28);
        assert!(a.validate().is_err());
        let mut b = ArchConfig::small();
        b.blocks.clear();
        assert!(b.validate().is_err());
        let mut c = ArchConfig::small();
        c.blocks[1].filters = 0;
        assert!(c.validate().is_err());
        assert!("conv-0-1".parse::<LayerId>().is_err());
        assert!("pool-1".parse::<LayerId>().is_err());
    }

    #[test]
    fn arch_round_trips_through_toml() {
        let a = ArchConfig::full(3);
        let text = toml::to_string(&a).unwrap();
        assert_eq!(toml::from_str::<ArchConfig>(&text).unwrap(), a);
    }
}
