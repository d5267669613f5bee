//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes   "TRPNCKPT"
//! version  u32       1
//! header   u32 len + UTF-8 JSON  {arch, iteration, adam_step, siamese}
//! count    u32       number of tensors
//! tensor*  u32 len + UTF-8 name, u32 rank, u64 dims[rank], f32 data[prod(dims)]
//! ```
//!
//! Tensors appear in a fixed order: model parameters, batch-norm running
//! statistics, then `adam.m.*` / `adam.v.*` when optimizer state is present,
//! then `siamese.weight` / `siamese.bias` for a pairwise baseline model.
//! Float payloads are raw bit patterns, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::{atomic_write, read_file, Reader};
use crate::loss::SiameseHead;
use crate::net::{ArchConfig, EmbeddingModel};
use crate::optim::Adam;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"TRPNCKPT";
const VERSION: u32 = 1;

/// Names of the pairwise head's scalars, which follow the model parameters
/// in optimizer state.
pub const SIAMESE_NAMES: [&str; 2] = ["siamese.weight", "siamese.bias"];

/// Names of everything the optimizer updates, in order.
pub fn trainable_names(model: &EmbeddingModel<f32>, siamese: bool) -> Vec<String> {
    let mut names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
    if siamese {
        names.extend(SIAMESE_NAMES.iter().map(|s| s.to_string()));
    }
    names
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    iteration: u64,
    adam_step: Option<u64>,
    siamese: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: EmbeddingModel<f32>,
    /// Training iterations completed so far.
    pub iteration: u64,
    pub optimizer: Option<Adam<f32>>,
    /// Head of a pairwise baseline; `None` for triplet models.
    pub siamese: Option<SiameseHead>,
}

impl Checkpoint {
    pub fn new(model: EmbeddingModel<f32>) -> Self {
        Self { model, iteration: 0, optimizer: None, siamese: None }
    }

    pub fn arch(&self) -> &ArchConfig {
        self.model.arch()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            arch: self.model.arch().clone(),
            iteration: self.iteration,
            adam_step: self.optimizer.as_ref().map(|a| a.step_count()),
            siamese: self.siamese.is_some(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;

        let mut tensors: Vec<(String, Tensor<f32>)> = Vec::new();
        for (n, t) in self.model.parameters() {
            tensors.push((n, t.clone()));
        }
        for (n, t) in self.model.buffers() {
            tensors.push((n, t.clone()));
        }
        if let Some(adam) = &self.optimizer {
            let names = trainable_names(&self.model, self.siamese.is_some());
            if adam.first_moments().len() != names.len() {
                return Err(Error::Contract(format!(
                    "optimizer tracks {} tensors but the model has {} trainable tensors",
                    adam.first_moments().len(),
                    names.len()
                )));
            }
            for (n, t) in names.iter().zip(adam.first_moments()) {
                tensors.push((format!("adam.m.{n}"), t.clone()));
            }
            for (n, t) in names.iter().zip(adam.second_moments()) {
                tensors.push((format!("adam.v.{n}"), t.clone()));
            }
        }
        if let Some(head) = &self.siamese {
            tensors.push((SIAMESE_NAMES[0].into(), Tensor::scalar(head.weight as f32)));
            tensors.push((SIAMESE_NAMES[1].into(), Tensor::scalar(head.bias as f32)));
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, origin);
        if r.take(8)? != MAGIC {
            return Err(r.error("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error(&format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(len)?).map_err(|e| r.error(&format!("bad header: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let data = r.f32s(n)?;
            tensors.push((name, Tensor::new(shape, data).map_err(|e| r.error(&e.to_string()))?));
        }
        r.finish()?;

        let mut model = EmbeddingModel::<f32>::build(header.arch)?;
        let mut it = tensors.into_iter();
        let mut next = |expected: &str, shape: &[usize]| -> Result<Tensor<f32>> {
            let (name, t) = it.next().ok_or_else(|| Error::Format {
                path: origin.to_path_buf(),
                message: format!("missing tensor {expected}"),
            })?;
            if name != expected || t.shape() != shape {
                return Err(Error::Format {
                    path: origin.to_path_buf(),
                    message: format!("expected {expected} {shape:?}, found {name} {:?}", t.shape()),
                });
            }
            Ok(t)
        };

        let param_names: Vec<(String, Vec<usize>)> =
            model.parameters().iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
        let buffer_names: Vec<(String, Vec<usize>)> =
            model.buffers().iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
        for ((n, s), dst) in param_names.iter().zip(model.parameters_mut()) {
            *dst = next(n, s)?;
        }
        for ((n, s), dst) in buffer_names.iter().zip(model.buffers_mut()) {
            *dst = next(n, s)?;
        }
        let mut trainable = param_names.clone();
        if header.siamese {
            trainable.extend(SIAMESE_NAMES.iter().map(|n| (n.to_string(), Vec::new())));
        }
        let optimizer = match header.adam_step {
            Some(step) => {
                let first = trainable
                    .iter()
                    .map(|(n, s)| next(&format!("adam.m.{n}"), s))
                    .collect::<Result<Vec<_>>>()?;
                let second = trainable
                    .iter()
                    .map(|(n, s)| next(&format!("adam.v.{n}"), s))
                    .collect::<Result<Vec<_>>>()?;
                Some(Adam::from_parts(step, first, second)?)
            }
            None => None,
        };
        let siamese = if header.siamese {
            let w = next(SIAMESE_NAMES[0], &[])?.item();
            let b = next(SIAMESE_NAMES[1], &[])?.item();
            Some(SiameseHead { weight: w as f64, bias: b as f64 })
        } else {
            None
        };
        if it.next().is_some() {
            return Err(Error::Format { path: origin.to_path_buf(), message: "unexpected trailing tensors".into() });
        }
        Ok(Self { model, iteration: header.iteration, optimizer, siamese })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }

}
