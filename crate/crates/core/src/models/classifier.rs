use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::layers::{self, Builder, Conv, Dense, Norm, Stats};
use super::{Architecture, Checkpoint, Descriptor, CHECKPOINT_VERSION};
use crate::autograd::{ParamStore, Tape, Var};
use crate::data::{ImageShape, LabeledDataset, Normalization};
use crate::real::Real;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downsample {
    /// 2×2 max pooling after each block.
    MaxPool,
    /// The block's convolution runs with stride 2.
    StridedConv,
}

/// Conv blocks (3×3 convolution → batch norm → leaky ReLU → downsample)
/// followed by fully connected layers with dropout in front of each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input: ImageShape,
    pub classes: usize,
    pub conv_channels: Vec<usize>,
    pub downsample: Downsample,
    /// Widths of the fully connected layers; the last equals `classes`.
    pub fc_widths: Vec<usize>,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

const KERNEL: usize = 3;
const PADDING: usize = 1;

impl ClassifierConfig {
    pub fn standard(input: ImageShape, classes: usize) -> Self {
        Self {
            input,
            classes,
            conv_channels: alloc::vec![32, 64, 128],
            downsample: Downsample::MaxPool,
            fc_widths: alloc::vec![128, classes],
            dropout: 0.3,
            leaky_slope: 0.01,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// Spatial size after the conv stack.
    fn conv_output(&self) -> Option<(usize, usize)> {
        let (mut h, mut w) = (self.input.height, self.input.width);
        for _ in &self.conv_channels {
            match self.downsample {
                Downsample::MaxPool => {
                    if h < 2 || w < 2 {
                        return None;
                    }
                    (h, w) = (h / 2, w / 2);
                }
                Downsample::StridedConv => {
                    h = layers::conv_extent(h, KERNEL, 2, PADDING)?;
                    w = layers::conv_extent(w, KERNEL, 2, PADDING)?;
                }
            }
        }
        Some((h, w))
    }

    pub fn flat_features(&self) -> usize {
        let (h, w) = self.conv_output().unwrap_or((0, 0));
        let c = self.conv_channels.last().copied().unwrap_or(self.input.channels);
        c * h * w
    }

    /// Width of the penultimate fully connected layer.
    pub fn feature_dim(&self) -> usize {
        self.fc_widths[self.fc_widths.len().saturating_sub(2)]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::invalid("classifier_config", reason));
        if self.classes < 2 {
            return bad("need at least two classes");
        }
        if self.fc_widths.len() < 2 {
            return bad("need at least two fully connected layers");
        }
        if self.fc_widths.last() != Some(&self.classes) {
            return bad("final fully connected width must equal the class count");
        }
        if self.input.is_empty() || self.conv_channels.iter().chain(&self.fc_widths).any(|&c| c == 0) {
            return bad("layer widths must be positive");
        }
        if self.conv_output().is_none_or(|(h, w)| h == 0 || w == 0) {
            return bad("input too small for the conv stack");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky slope must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Logits, simplex probabilities and penultimate features of one batch.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierOutput {
    pub logits: Var,
    pub probs: Var,
    pub features: Var,
}

#[derive(Debug, Clone)]
struct Block {
    conv: Conv,
    norm: Norm,
}

/// Convolutional classifier `f: images → Δ^{K−1}` operating on normalized
/// inputs.
#[derive(Debug, Clone)]
pub struct Classifier<T: Real> {
    config: ClassifierConfig,
    normalization: Normalization,
    params: ParamStore<T>,
    buffers: ParamStore<T>,
    blocks: Vec<Block>,
    dense: Vec<Dense>,
    seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

impl<T: Real> Classifier<T> {
    pub fn new(config: ClassifierConfig, normalization: Normalization, seed: u64) -> Result<Self> {
        config.validate()?;
        if normalization.channels() != config.input.channels {
            return Err(Error::invalid("classifier", "normalization channels differ from input"));
        }
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        let mut b = Builder {
            params: &mut params,
            buffers: &mut buffers,
            prefix: "classifier",
            seed,
            slope: config.leaky_slope,
        };
        let stride = match config.downsample {
            Downsample::MaxPool => 1,
            Downsample::StridedConv => 2,
        };
        let mut blocks = Vec::new();
        let mut cin = config.input.channels;
        for (i, &cout) in config.conv_channels.iter().enumerate() {
            blocks.push(Block {
                conv: b.conv(&format!("conv{}", i + 1), cin, cout, KERNEL, stride, PADDING)?,
                norm: b.norm(&format!("bn{}", i + 1), cout, config.bn_eps)?,
            });
            cin = cout;
        }
        let mut dense = Vec::new();
        let mut fin = config.flat_features();
        for (i, &fout) in config.fc_widths.iter().enumerate() {
            dense.push(b.dense(&format!("fc{}", i + 1), fin, fout)?);
            fin = fout;
        }
        Ok(Self {
            config,
            normalization,
            params,
            buffers,
            blocks,
            dense,
            seed,
            metrics: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamStore<T> {
        &self.buffers
    }

    /// Hash over parameters and running statistics.
    pub fn fingerprint(&self) -> u64 {
        self.params.fingerprint() ^ self.buffers.fingerprint().rotate_left(1)
    }

    pub fn bind(&self, tape: &mut Tape<T>, track: bool) -> Vec<Var> {
        self.params.bind(tape, track)
    }

    /// Eval-mode pass: dropout off, running statistics; pure.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &[Var], input: Var) -> Result<ClassifierOutput> {
        self.run(tape, bound, input, Stats::Frozen(&self.buffers), None)
    }

    /// Train-mode pass: batch statistics (folded into the running averages)
    /// and dropout masks derived from `seed`.
    pub fn forward_train(&mut self, tape: &mut Tape<T>, bound: &[Var], input: Var, seed: u64) -> Result<ClassifierOutput> {
        let momentum = self.config.bn_momentum;
        let mut buffers = core::mem::take(&mut self.buffers);
        let out = self.run(tape, bound, input, Stats::Update { buffers: &mut buffers, momentum }, Some(seed));
        self.buffers = buffers;
        out
    }

    fn run(
        &self,
        tape: &mut Tape<T>,
        bound: &[Var],
        input: Var,
        mut stats: Stats<'_, T>,
        dropout_seed: Option<u64>,
    ) -> Result<ClassifierOutput> {
        let c = &self.config;
        let shape = tape.shape(input);
        if shape.len() != 4 || shape[1..] != [c.input.channels, c.input.height, c.input.width] {
            return Err(Error::shape("classifier_forward", &c.input.with_batch(shape.first().copied().unwrap_or(0)), shape));
        }
        let batch = shape[0];
        let mut x = input;
        for block in &self.blocks {
            x = block.conv.forward(tape, bound, x)?;
            x = block.norm.forward(tape, bound, x, &mut stats)?;
            x = tape.leaky_relu(x, c.leaky_slope)?;
            if c.downsample == Downsample::MaxPool {
                x = tape.max_pool2d(x, 2)?;
            }
        }
        x = tape.reshape(x, &[batch, c.flat_features()])?;
        let train = dropout_seed.is_some();
        let mut features = x;
        let last = self.dense.len() - 1;
        for (i, dense) in self.dense.iter().enumerate() {
            let seed = rng::derive_seed(dropout_seed.unwrap_or(0), i as u64);
            x = tape.dropout(x, c.dropout, train, seed)?;
            x = dense.forward(tape, bound, x)?;
            if i < last {
                x = tape.leaky_relu(x, c.leaky_slope)?;
                features = x;
            }
        }
        let probs = tape.softmax(x)?;
        Ok(ClassifierOutput {
            logits: x,
            probs,
            features,
        })
    }

    /// Eval-mode class probabilities for already-normalized images.
    pub fn predict(&self, images: &[T], batch: usize) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(&self.config.input.with_batch(batch), images.to_vec())?;
        let out = self.forward(&mut tape, &bound, x)?;
        Ok(tape.data(out.probs).to_vec())
    }

    /// Penultimate activations for already-normalized images (eval mode).
    pub fn extract_features(&self, images: &[T], batch: usize) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(&self.config.input.with_batch(batch), images.to_vec())?;
        let out = self.forward(&mut tape, &bound, x)?;
        Ok(tape.data(out.features).to_vec())
    }

    /// Top-1 accuracy on raw `[0, 1]` images, normalized with this
    /// classifier's constants.
    pub fn accuracy(&self, dataset: &LabeledDataset, batch_size: usize) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::Empty { op: "accuracy" });
        }
        let shape = dataset.image_shape();
        let k = self.config.classes;
        let mut correct = 0usize;
        let indices: Vec<usize> = (0..dataset.len()).collect();
        for chunk in indices.chunks(batch_size.max(1)) {
            let (images, labels) = dataset.gather(chunk);
            let x: Vec<T> = self.normalization.apply(&images, shape).into_iter().map(|v| T::cast(f64::from(v))).collect();
            let probs = self.predict(&x, chunk.len())?;
            correct += probs
                .chunks(k)
                .zip(&labels)
                .filter(|(p, &l)| super::argmax(p) == l)
                .count();
        }
        Ok(correct as f64 / dataset.len() as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            descriptor: Descriptor {
                architecture: Architecture::Classifier(self.config.clone()),
                normalization: self.normalization.clone(),
                seed: self.seed,
                metrics: self.metrics.clone(),
            },
            tensors: layers::named_tensors(&[&self.params, &self.buffers]),
        }
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        let d = &checkpoint.descriptor;
        let Architecture::Classifier(config) = &d.architecture else {
            return Err(Error::invalid("load_checkpoint", "not a classifier checkpoint"));
        };
        let mut model = Self::new(config.clone(), d.normalization.clone(), d.seed)?;
        layers::load_named(&mut [&mut model.params, &mut model.buffers], &checkpoint.tensors)?;
        model.metrics = d.metrics.clone();
        Ok(model)
    }
}
