use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::layers::{self, Builder, Conv, Dense, Norm, Stats};
use super::{Architecture, Checkpoint, ConditioningVector, Descriptor, HotMatrix, CHECKPOINT_VERSION};
use crate::autograd::{ParamStore, Tape, Var};
use crate::data::{ImageShape, Normalization};
use crate::real::Real;
use crate::rng;
use crate::{Error, Result};

/// One transposed convolution of an upsampling stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpLayer {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl UpLayer {
    pub const fn new(channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            channels,
            kernel,
            stride,
            padding,
        }
    }
}

/// Latent ⊕ conditioning vector → dense projection to a
/// `seed_channels × seed_size²` map → `stage1` (ending at `K × K`) →
/// hot matrix joins as one channel → `stage2` (ending at the image size) →
/// sigmoid → classifier normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub classes: usize,
    pub seed_channels: usize,
    pub seed_size: usize,
    pub stage1: Vec<UpLayer>,
    pub stage2: Vec<UpLayer>,
    pub output: ImageShape,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl GeneratorConfig {
    /// Default schedule: `⌈K/2⌉` seed map, one stride-2 layer up to `K × K`,
    /// then to `H/2`, then a stride-2 layer to `H` and a 3×3 output layer.
    pub fn standard(classes: usize, output: ImageShape) -> Result<Self> {
        let half = output.height / 2;
        if output.height != output.width || output.height % 2 != 0 || classes < 2 || half < classes {
            return Err(Error::invalid(
                "generator_config",
                "standard schedule needs a square even image with H/2 ≥ K",
            ));
        }
        let seed_size = classes.div_ceil(2);
        let first = classes + 4 - 2 * seed_size;
        Ok(Self {
            latent_dim: 64,
            classes,
            seed_channels: 128,
            seed_size,
            stage1: alloc::vec![UpLayer::new(64, first, 2, 1)],
            stage2: alloc::vec![
                UpLayer::new(32, half - classes + 1, 1, 0),
                UpLayer::new(16, 4, 2, 1),
                UpLayer::new(output.channels, 3, 1, 1),
            ],
            output,
            dropout: 0.3,
            leaky_slope: 0.2,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        })
    }

    fn stack_extent(mut size: usize, stack: &[UpLayer]) -> Option<usize> {
        for l in stack {
            if l.stride == 0 {
                return None;
            }
            size = layers::conv_transpose_extent(size, l.kernel, l.stride, l.padding)?;
        }
        Some(size)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::invalid("generator_config", reason));
        if self.classes < 2 {
            return bad("need at least two classes");
        }
        if self.latent_dim == 0 || self.seed_channels == 0 || self.seed_size == 0 || self.output.is_empty() {
            return bad("sizes must be positive");
        }
        if self.stage2.is_empty() {
            return bad("second stage needs at least one layer");
        }
        if self.stage1.iter().chain(&self.stage2).any(|l| l.channels == 0 || l.kernel == 0) {
            return bad("layer widths must be positive");
        }
        if Self::stack_extent(self.seed_size, &self.stage1) != Some(self.classes) {
            return bad("first stage must end at K × K");
        }
        if self.output.height != self.output.width
            || Self::stack_extent(self.classes, &self.stage2) != Some(self.output.height)
        {
            return bad("second stage must end at the image size");
        }
        if self.stage2.last().map(|l| l.channels) != Some(self.output.channels) {
            return bad("last layer must emit the image channels");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky slope must lie in (0, 1)");
        }
        Ok(())
    }

    fn stage1_channels(&self) -> usize {
        self.stage1.last().map_or(self.seed_channels, |l| l.channels)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorOutput {
    /// Sigmoid outputs in `[0, 1]`.
    pub pixels: Var,
    /// `pixels` mapped through the classifier's normalization.
    pub images: Var,
}

#[derive(Debug, Clone)]
struct Up {
    conv: Conv,
    norm: Option<Norm>,
}

#[derive(Debug, Clone)]
pub struct Generator<T: Real> {
    config: GeneratorConfig,
    normalization: Normalization,
    params: ParamStore<T>,
    buffers: ParamStore<T>,
    project: Dense,
    project_norm: Norm,
    stage1: Vec<Up>,
    stage2: Vec<Up>,
    seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

impl<T: Real> Generator<T> {
    pub fn new(config: GeneratorConfig, normalization: Normalization, seed: u64) -> Result<Self> {
        config.validate()?;
        if normalization.channels() != config.output.channels {
            return Err(Error::invalid("generator", "normalization channels differ from output"));
        }
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        let mut b = Builder {
            params: &mut params,
            buffers: &mut buffers,
            prefix: "generator",
            seed,
            slope: config.leaky_slope,
        };
        let seed_len = config.seed_channels * config.seed_size * config.seed_size;
        let project = b.dense("project", config.latent_dim + config.classes, seed_len)?;
        let project_norm = b.norm("project_bn", config.seed_channels, config.bn_eps)?;
        let mut stage1 = Vec::new();
        let mut cin = config.seed_channels;
        for (i, l) in config.stage1.iter().enumerate() {
            stage1.push(Up {
                conv: b.conv_transpose(&format!("up1_{}", i + 1), cin, l.channels, l.kernel, l.stride, l.padding)?,
                norm: Some(b.norm(&format!("bn1_{}", i + 1), l.channels, config.bn_eps)?),
            });
            cin = l.channels;
        }
        cin += 1;
        let mut stage2 = Vec::new();
        let last = config.stage2.len() - 1;
        for (i, l) in config.stage2.iter().enumerate() {
            let conv = b.conv_transpose(&format!("up2_{}", i + 1), cin, l.channels, l.kernel, l.stride, l.padding)?;
            let norm = if i < last {
                Some(b.norm(&format!("bn2_{}", i + 1), l.channels, config.bn_eps)?)
            } else {
                None
            };
            stage2.push(Up { conv, norm });
            cin = l.channels;
        }
        Ok(Self {
            config,
            normalization,
            params,
            buffers,
            project,
            project_norm,
            stage1,
            stage2,
            seed,
            metrics: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
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

    pub fn fingerprint(&self) -> u64 {
        self.params.fingerprint() ^ self.buffers.fingerprint().rotate_left(1)
    }

    pub fn bind(&self, tape: &mut Tape<T>, track: bool) -> Vec<Var> {
        self.params.bind(tape, track)
    }

    /// Eval-mode pass (no dropout, running statistics).
    pub fn forward(&self, tape: &mut Tape<T>, bound: &[Var], latent: Var, cond: Var, hot: Var) -> Result<GeneratorOutput> {
        self.run(tape, bound, latent, cond, hot, Stats::Frozen(&self.buffers), None)
    }

    /// Train-mode pass: batch statistics and dropout masks derived from `seed`.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape<T>,
        bound: &[Var],
        latent: Var,
        cond: Var,
        hot: Var,
        seed: u64,
    ) -> Result<GeneratorOutput> {
        let momentum = self.config.bn_momentum;
        let mut buffers = core::mem::take(&mut self.buffers);
        let stats = Stats::Update {
            buffers: &mut buffers,
            momentum,
        };
        let out = self.run(tape, bound, latent, cond, hot, stats, Some(seed));
        self.buffers = buffers;
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        tape: &mut Tape<T>,
        bound: &[Var],
        latent: Var,
        cond: Var,
        hot: Var,
        mut stats: Stats<'_, T>,
        dropout_seed: Option<u64>,
    ) -> Result<GeneratorOutput> {
        let c = &self.config;
        let k = c.classes;
        let batch = tape.shape(latent).first().copied().unwrap_or(0);
        if tape.shape(latent) != [batch, c.latent_dim] {
            return Err(Error::shape("generator_forward", &[batch, c.latent_dim], tape.shape(latent)));
        }
        if tape.shape(cond) != [batch, k] {
            return Err(Error::shape("generator_forward", &[batch, k], tape.shape(cond)));
        }
        if tape.shape(hot) != [batch, 1, k, k] {
            return Err(Error::shape("generator_forward", &[batch, 1, k, k], tape.shape(hot)));
        }
        let train = dropout_seed.is_some();
        let mut dropouts = 0u64;
        let mut drop = |tape: &mut Tape<T>, x: Var| {
            dropouts += 1;
            tape.dropout(x, c.dropout, train, rng::derive_seed(dropout_seed.unwrap_or(0), dropouts))
        };

        let x = tape.concat(&[latent, cond])?;
        let x = self.project.forward(tape, bound, x)?;
        let x = tape.reshape(x, &[batch, c.seed_channels, c.seed_size, c.seed_size])?;
        let x = self.project_norm.forward(tape, bound, x, &mut stats)?;
        let x = tape.leaky_relu(x, c.leaky_slope)?;
        let mut x = drop(tape, x)?;
        for up in &self.stage1 {
            x = up.conv.forward(tape, bound, x)?;
            if let Some(norm) = &up.norm {
                x = norm.forward(tape, bound, x, &mut stats)?;
            }
            x = tape.leaky_relu(x, c.leaky_slope)?;
            x = drop(tape, x)?;
        }
        debug_assert_eq!(tape.shape(x), [batch, c.stage1_channels(), k, k]);
        x = tape.concat(&[x, hot])?;
        for up in &self.stage2 {
            x = up.conv.forward(tape, bound, x)?;
            if let Some(norm) = &up.norm {
                x = norm.forward(tape, bound, x, &mut stats)?;
                x = tape.leaky_relu(x, c.leaky_slope)?;
                x = drop(tape, x)?;
            }
        }
        let pixels = tape.sigmoid(x);
        let (scale, shift) = self.normalization.affine();
        let scale: Vec<T> = scale.into_iter().map(T::cast).collect();
        let shift: Vec<T> = shift.into_iter().map(T::cast).collect();
        let images = tape.channel_affine(pixels, &scale, &shift)?;
        Ok(GeneratorOutput { pixels, images })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            descriptor: Descriptor {
                architecture: Architecture::Generator(self.config.clone()),
                normalization: self.normalization.clone(),
                seed: self.seed,
                metrics: self.metrics.clone(),
            },
            tensors: layers::named_tensors(&[&self.params, &self.buffers]),
        }
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        let d = &checkpoint.descriptor;
        let Architecture::Generator(config) = &d.architecture else {
            return Err(Error::invalid("load_checkpoint", "not a generator checkpoint"));
        };
        let mut model = Self::new(config.clone(), d.normalization.clone(), d.seed)?;
        layers::load_named(&mut [&mut model.params, &mut model.buffers], &checkpoint.tensors)?;
        model.metrics = d.metrics.clone();
        Ok(model)
    }
}

/// Packs per-sample conditions into `[B, K]` and `[B, 1, K, K]` data.
pub fn pack_conditions<T: Real>(conds: &[ConditioningVector], hots: &[HotMatrix]) -> Result<(Vec<T>, Vec<T>)> {
    if conds.len() != hots.len() {
        return Err(Error::invalid("generator_forward", "batch sizes differ"));
    }
    let mut c = Vec::new();
    let mut h = Vec::new();
    for (cond, hot) in conds.iter().zip(hots) {
        if cond.classes() != hot.classes() {
            return Err(Error::invalid("generator_forward", "class counts differ"));
        }
        c.extend(cond.values().iter().map(|&v| T::cast(v)));
        h.extend(hot.values().iter().map(|&v| T::cast(v)));
    }
    Ok((c, h))
}
