use rand_distr::{Distribution, Normal};

use super::arch::{ArchConfig, LayerId};
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::tensor::kernels::{self, KERNEL};
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running averages are updated.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub name: LayerId,
    /// `[out, in, 3, 3]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub norm: Option<BatchNorm<T>>,
}

/// The embedding CNN: per block `conv -> BN -> ReLU` repeated, a ceil-mode
/// max pool between blocks, then flatten -> fully connected -> ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel<T = f32> {
    arch: ArchConfig,
    blocks: Vec<Vec<ConvLayer<T>>>,
    /// `[flat_dim, embedding_dim]`
    pub fc_weight: Tensor<T>,
    pub fc_bias: Tensor<T>,
}

impl<T: Real> EmbeddingModel<T> {
    /// Allocates every layer with zero weights, unit BN scale and unit running variance.
    pub fn build(arch: ArchConfig) -> Result<Self> {
        arch.validate()?;
        let mut in_ch = arch.input_shape.0;
        let mut blocks = Vec::with_capacity(arch.blocks.len());
        for (bi, spec) in arch.blocks.iter().enumerate() {
            let mut layers = Vec::with_capacity(spec.convs);
            for li in 0..spec.convs {
                let k = spec.filters;
                layers.push(ConvLayer {
                    name: LayerId::Conv { block: bi + 1, index: li + 1 },
                    weight: Tensor::zeros(vec![k, in_ch, KERNEL, KERNEL]),
                    bias: Tensor::zeros(vec![k]),
                    norm: arch.batch_norm.then(|| BatchNorm {
                        gamma: Tensor::full(vec![k], T::one()),
                        beta: Tensor::zeros(vec![k]),
                        running_mean: Tensor::zeros(vec![k]),
                        running_var: Tensor::full(vec![k], T::one()),
                    }),
                });
                in_ch = k;
            }
            blocks.push(layers);
        }
        let fc_weight = Tensor::zeros(vec![arch.flat_dim(), arch.embedding_dim]);
        let fc_bias = Tensor::zeros(vec![arch.embedding_dim]);
        Ok(Self { arch, blocks, fc_weight, fc_bias })
    }

    /// He initialization: weights ~ N(0, sqrt(2/n)) with `n` the fan-in of the
    /// unit, zero biases, unit BN scale and zero shift.
    pub fn he_init(&mut self, seed: u64) {
        let mut rng = rng::stream(seed, streams::INIT, 0);
        let mut fill = |t: &mut Tensor<T>, fan_in: usize| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for v in t.data_mut() {
                *v = T::from_f64_lossy(normal.sample(&mut rng));
            }
        };
        for layer in self.blocks.iter_mut().flatten() {
            let fan_in = layer.weight.shape()[1] * KERNEL * KERNEL;
            fill(&mut layer.weight, fan_in);
            layer.bias.data_mut().fill(T::zero());
            if let Some(bn) = &mut layer.norm {
                bn.gamma.data_mut().fill(T::one());
                bn.beta.data_mut().fill(T::zero());
            }
        }
        let fan_in = self.fc_weight.shape()[0];
        fill(&mut self.fc_weight, fan_in);
        self.fc_bias.data_mut().fill(T::zero());
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &ConvLayer<T>> {
        self.blocks.iter().flatten()
    }

    pub fn conv_layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer<T>> {
        self.blocks.iter_mut().flatten()
    }

    pub fn layer_registry(&self) -> Vec<LayerId> {
        self.arch.layer_names()
    }

    /// Trainable tensors with stable names, in binding order.
    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for l in self.conv_layers() {
            out.push((format!("{}.weight", l.name), &l.weight));
            out.push((format!("{}.bias", l.name), &l.bias));
            if let Some(bn) = &l.norm {
                out.push((format!("{}.bn.gamma", l.name), &bn.gamma));
                out.push((format!("{}.bn.beta", l.name), &bn.beta));
            }
        }
        out.push(("fc-1.weight".into(), &self.fc_weight));
        out.push(("fc-1.bias".into(), &self.fc_bias));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in self.blocks.iter_mut().flatten() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(bn) = &mut l.norm {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out.push(&mut self.fc_weight);
        out.push(&mut self.fc_bias);
        out
    }

    /// Batch-norm running statistics, named.
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for l in self.conv_layers() {
            if let Some(bn) = &l.norm {
                out.push((format!("{}.bn.running_mean", l.name), &bn.running_mean));
                out.push((format!("{}.bn.running_var", l.name), &bn.running_var));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in self.blocks.iter_mut().flatten() {
            if let Some(bn) = &mut l.norm {
                out.push(&mut bn.running_mean);
                out.push(&mut bn.running_var);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.parameters().into_iter().map(|(_, t)| tape.param(t.clone())).collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let (c, h, w) = self.arch.input_shape;
        match shape {
            [_, ic, ih, iw] if (*ic, *ih, *iw) == (c, h, w) => Ok(()),
            _ => Err(Error::shape(format!(
                "images of shape {shape:?} do not match model input [N, {c}, {h}, {w}]"
            ))),
        }
    }

    /// Taped forward pass. `params` must come from [`EmbeddingModel::bind`].
    /// In [`Mode::Train`] batch statistics are used and running averages updated.
    pub fn forward(&mut self, tape: &mut Tape<T>, params: &[Var], input: Var, mode: Mode) -> Result<Var> {
        self.check_input(tape.value(input).shape())?;
        let mut p = params.iter().copied();
        let mut next = || p.next().ok_or_else(|| Error::Contract("too few bound parameters".into()));
        let mut x = input;
        let n_blocks = self.blocks.len();
        for bi in 0..n_blocks {
            if bi > 0 {
                x = tape.maxpool2d_ceil(x)?;
            }
            for layer in &mut self.blocks[bi] {
                let (w, b) = (next()?, next()?);
                x = tape.conv2d(x, w, b)?;
                if let Some(bn) = &mut layer.norm {
                    let (g, be) = (next()?, next()?);
                    x = match mode {
                        Mode::Train => {
                            let (y, stats) = tape.batchnorm_train(x, g, be)?;
                            kernels::update_running_stats(
                                &mut bn.running_mean,
                                &mut bn.running_var,
                                &stats.mean,
                                &stats.var,
                                stats.count,
                            );
                            y
                        }
                        Mode::Eval => tape.batchnorm_fixed(x, g, be, &bn.running_mean, &bn.running_var)?,
                    };
                }
                x = tape.relu(x);
            }
        }
        let flat = tape.flatten(x)?;
        let (w, b) = (next()?, next()?);
        let fc = tape.linear(flat, w, b)?;
        Ok(tape.relu(fc))
    }

    fn forward_eval(&self, images: &Tensor<T>, capture: Option<LayerId>) -> Result<Tensor<T>> {
        self.check_input(images.shape())?;
        let mut x = images.clone();
        for (bi, block) in self.blocks.iter().enumerate() {
            if bi > 0 {
                x = kernels::maxpool2d_ceil(&x)?.0;
            }
            for layer in block {
                x = kernels::conv2d(&x, &layer.weight, &layer.bias)?;
                if capture == Some(layer.name) {
                    return kernels::spatial_max(&x);
                }
                if let Some(bn) = &layer.norm {
                    x = kernels::batchnorm_eval(&x, &bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var)?.0;
                }
                x = kernels::relu(&x);
            }
        }
        let n = x.shape()[0];
        let flat = x.reshape(vec![n, self.arch.flat_dim()])?;
        let emb = kernels::relu(&kernels::linear(&flat, &self.fc_weight, &self.fc_bias)?);
        if !emb.all_finite() {
            return Err(Error::NonFinite { context: "embedding forward pass".into() });
        }
        Ok(emb)
    }

    /// Eval-mode embeddings `[N, embedding_dim]`; nothing is recorded.
    pub fn embed(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_eval(images, None)
    }

    /// Features of one layer for a batch `[N, C, H, W]`: the per-channel
    /// spatial maximum of a conv layer's output, or the embedding for `fc-1`.
    pub fn layer_features(&self, images: &Tensor<T>, layer: LayerId) -> Result<Tensor<T>> {
        if !self.layer_registry().contains(&layer) {
            return Err(Error::UnknownLayer(layer.to_string()));
        }
        match layer {
            LayerId::Fc => self.forward_eval(images, None),
            conv => self.forward_eval(images, Some(conv)),
        }
    }

    /// Copies the model into another precision.
    pub fn cast<U: Real>(&self) -> EmbeddingModel<U> {
        EmbeddingModel {
            arch: self.arch.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| {
                    b.iter()
                        .map(|l| ConvLayer {
                            name: l.name,
                            weight: l.weight.cast(),
                            bias: l.bias.cast(),
                            norm: l.norm.as_ref().map(|bn| BatchNorm {
                                gamma: bn.gamma.cast(),
                                beta: bn.beta.cast(),
                                running_mean: bn.running_mean.cast(),
                                running_var: bn.running_var.cast(),
                            }),
                        })
                        .collect()
                })
                .collect(),
            fc_weight: self.fc_weight.cast(),
            fc_bias: self.fc_bias.cast(),
        }
    }
}
