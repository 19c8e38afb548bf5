//! Network inversion: train a conditioned generator against a frozen
//! classifier by minimizing
//!
//! ```text
//! L = α · KL(P ‖ Q) + β · CE(y, Q) + γ · mean_{i≠j} cos(φ_i, φ_j)
//! ```
//!
//! where `P` is the conditioning vector, `Q` the classifier output on the
//! generated image, `y` the encoded label, and `φ` the classifier's
//! penultimate features.

mod losses;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use losses::{kl_value, mean_pairwise_cosine, NORM_EPS, PROB_EPS};

use crate::autograd::{AdamConfig, AdamState, Tape, Var};
use crate::models::{
    argmax, one_hot, pack_conditions, AxisChoice, Classifier, ConditioningVector, Generator, GeneratorConfig, HotMatrix,
};
use crate::real::Real;
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionMode {
    /// Softmaxed normal draws; the argmax is the label.
    Soft,
    /// One-hot vectors for a uniformly drawn class.
    OneHotCcc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("loss_weights", "weights must be finite and non-negative"));
        }
        if all.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("loss_weights", "at least one weight must be positive"));
        }
        Ok(())
    }

    /// `α · kl + β · ce + γ · cosine`.
    pub fn combine(&self, kl: f64, ce: f64, cosine: f64) -> f64 {
        self.alpha * kl + self.beta * ce + self.gamma * cosine
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub mode: InversionMode,
    pub weights: LossWeights,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub axis: AxisChoice,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            mode: InversionMode::OneHotCcc,
            weights: LossWeights::default(),
            steps: 3000,
            batch_size: 64,
            adam: AdamConfig::with_lr(2e-4),
            seed: 0,
            axis: AxisChoice::Random,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("inversion_config", "batch size must be at least 1"));
        }
        if self.weights.gamma > 0.0 && self.batch_size < 2 {
            return Err(Error::invalid("inversion_config", "the cosine term needs a batch of at least 2"));
        }
        Ok(())
    }
}

/// Loss terms of one step. `total` is [`LossWeights::combine`] of the parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: usize,
    pub kl: f64,
    pub ce: f64,
    pub cosine: f64,
    pub total: f64,
    /// Mean max-softmax probability over the batch.
    pub mean_confidence: f64,
}

/// One batch of generator inputs.
#[derive(Debug, Clone)]
pub struct GeneratorInputs {
    pub latents: Vec<f64>,
    pub conditions: Vec<ConditioningVector>,
    pub hots: Vec<HotMatrix>,
}

impl GeneratorInputs {
    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.conditions.iter().map(|c| c.label()).collect()
    }

    /// Draws `labels.len()` samples conditioned one-hot on the given classes.
    pub fn one_hot(config: &GeneratorConfig, labels: &[usize], axis: AxisChoice, rng: &mut Rng) -> Result<Self> {
        let mut conditions = Vec::with_capacity(labels.len());
        for &l in labels {
            conditions.push(one_hot(l, config.classes)?);
        }
        Self::complete(config, conditions, axis, rng)
    }

    pub fn sample(config: &GeneratorConfig, mode: InversionMode, batch: usize, axis: AxisChoice, rng: &mut Rng) -> Result<Self> {
        let k = config.classes;
        let mut conditions = Vec::with_capacity(batch);
        for _ in 0..batch {
            conditions.push(match mode {
                InversionMode::Soft => ConditioningVector::sample_soft(k, rng)?,
                InversionMode::OneHotCcc => one_hot(rng::below(rng, k), k)?,
            });
        }
        Self::complete(config, conditions, axis, rng)
    }

    fn complete(config: &GeneratorConfig, conditions: Vec<ConditioningVector>, axis: AxisChoice, rng: &mut Rng) -> Result<Self> {
        let mut hots = Vec::with_capacity(conditions.len());
        for c in &conditions {
            hots.push(HotMatrix::new(c.label(), config.classes, axis.pick(rng))?);
        }
        let latents = (0..conditions.len() * config.latent_dim).map(|_| rng::normal(rng)).collect();
        Ok(Self {
            latents,
            conditions,
            hots,
        })
    }

    /// Puts the inputs on `tape` as constants: latent, condition, hot matrix.
    pub fn constants<T: Real>(&self, tape: &mut Tape<T>, config: &GeneratorConfig) -> Result<(Var, Var, Var)> {
        let (b, k) = (self.len(), config.classes);
        let (cond, hot) = pack_conditions::<T>(&self.conditions, &self.hots)?;
        let z = tape.constant(&[b, config.latent_dim], self.latents.iter().map(|v| T::cast(*v)).collect())?;
        let c = tape.constant(&[b, k], cond)?;
        let h = tape.constant(&[b, 1, k, k], hot)?;
        Ok((z, c, h))
    }
}

/// Penultimate-layer features of normalized `images` (`batch` of them).
pub fn extract_features<T: Real>(classifier: &Classifier<T>, images: &[T], batch: usize) -> Result<Vec<T>> {
    classifier.extract_features(images, batch)
}

/// Records the composite loss for `inputs` on `tape`, returning the total and
/// its breakdown. The classifier is bound as constants.
pub fn composite_step<T: Real>(
    tape: &mut Tape<T>,
    generator: &mut Generator<T>,
    gen_bound: &[Var],
    classifier: &Classifier<T>,
    inputs: &GeneratorInputs,
    weights: &LossWeights,
    dropout_seed: u64,
    step: usize,
) -> Result<(Var, LossBreakdown)> {
    let cls_bound = classifier.bind(tape, false);
    let (z, c, h) = inputs.constants(tape, generator.config())?;
    let images = generator.forward_train(tape, gen_bound, z, c, h, dropout_seed)?.images;
    let out = classifier.forward(tape, &cls_bound, images)?;
    let k = classifier.config().classes;
    let target: Vec<f64> = inputs.conditions.iter().flat_map(|c| c.values().iter().copied()).collect();
    // Soft mode encodes the label as the argmax; one-hot as the hot index.
    let labels: Vec<usize> = inputs.conditions.iter().map(|c| argmax(c.values())).collect();
    let kl = tape.kl_loss(&target, out.probs)?;
    let ce = tape.ce_loss(&labels, out.probs)?;
    let mut terms = alloc::vec![(kl, weights.alpha), (ce, weights.beta)];
    let mut cosine_value = 0.0;
    if inputs.len() >= 2 {
        let cosine = tape.cosine_diversity_loss(out.features)?;
        cosine_value = tape.item(cosine).as_f64();
        terms.push((cosine, weights.gamma));
    }
    let total = tape.weighted_sum(&terms)?;
    let (kl_value, ce_value) = (tape.item(kl).as_f64(), tape.item(ce).as_f64());
    let mean_confidence = tape
        .data(out.probs)
        .chunks(k)
        .map(|row| row.iter().fold(T::zero(), |a, b| a.max(*b)).as_f64())
        .sum::<f64>()
        / inputs.len() as f64;
    let breakdown = LossBreakdown {
        step,
        kl: kl_value,
        ce: ce_value,
        cosine: cosine_value,
        total: weights.combine(kl_value, ce_value, cosine_value),
        mean_confidence,
    };
    Ok((total, breakdown))
}

/// Trained generator and the per-step loss history.
#[derive(Debug, Clone)]
pub struct InversionOutcome<T: Real> {
    pub generator: Generator<T>,
    pub history: Vec<LossBreakdown>,
}

/// Trains a fresh generator against `classifier` (held in eval mode and
/// never modified). Step `t` draws its inputs from the stream
/// `derive_seed(seed, t)`, so a run is a pure function of its arguments.
pub fn run_inversion<T: Real>(
    classifier: &Classifier<T>,
    generator_config: GeneratorConfig,
    config: &InversionConfig,
    mut on_step: impl FnMut(&LossBreakdown),
) -> Result<InversionOutcome<T>> {
    config.validate()?;
    if generator_config.classes != classifier.config().classes {
        return Err(Error::invalid("run_inversion", "generator and classifier class counts differ"));
    }
    if generator_config.output != classifier.config().input {
        return Err(Error::invalid("run_inversion", "generator output shape differs from classifier input"));
    }
    let init_seed = rng::derive_seed(config.seed, u64::MAX);
    let mut generator = Generator::new(generator_config, classifier.normalization().clone(), init_seed)?;
    let mut adam = AdamState::new(config.adam, generator.params());
    let mut history = Vec::with_capacity(config.steps);
    let sample_base = rng::derive_seed(config.seed, 1);
    let dropout_base = rng::derive_seed(config.seed, 2);
    for step in 0..config.steps {
        let mut rng = rng::rng(rng::derive_seed(sample_base, step as u64));
        let inputs = GeneratorInputs::sample(generator.config(), config.mode, config.batch_size, config.axis, &mut rng)?;
        let mut tape = Tape::new();
        let bound = generator.bind(&mut tape, true);
        let dropout_seed = rng::derive_seed(dropout_base, step as u64);
        let (total, breakdown) =
            composite_step(&mut tape, &mut generator, &bound, classifier, &inputs, &config.weights, dropout_seed, step)?;
        if !tape.item(total).as_f64().is_finite() || !breakdown.total.is_finite() {
            return Err(Error::NonFinite { step });
        }
        tape.backward(total)?;
        generator.params_mut().pull_grads(&tape, &bound);
        adam.step(generator.params_mut())?;
        on_step(&breakdown);
        history.push(breakdown);
    }
    Ok(InversionOutcome { generator, history })
}
