use alloc::string::ToString;

use serde::{Deserialize, Serialize};

use super::{Classifier, ClassifierConfig};
use crate::autograd::{AdamConfig, AdamState, Tape};
use crate::data::{BatchIterator, LabeledDataset, Normalization};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 128,
            adam: AdamConfig::with_lr(1e-3),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainProgress {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
}

/// Runs one optimizer step on a raw `[0, 1]` batch and returns the
/// cross-entropy before the update.
pub fn train_step(
    model: &mut Classifier<f32>,
    adam: &mut AdamState<f32>,
    images: &[f32],
    labels: &[usize],
    seed: u64,
) -> Result<f64> {
    let shape = model.config().input;
    let x = model.normalization().apply(images, shape);
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let input = tape.constant(&shape.with_batch(labels.len()), x)?;
    let out = model.forward_train(&mut tape, &bound, input, seed)?;
    let loss = tape.cross_entropy_logits(out.logits, labels)?;
    let value = f64::from(tape.item(loss));
    if !value.is_finite() {
        return Err(Error::NonFinite { step: adam.step_count() as usize });
    }
    tape.backward(loss)?;
    model.params_mut().pull_grads(&tape, &bound);
    adam.step(model.params_mut())?;
    Ok(value)
}

/// Trains a fresh classifier with Adam on shuffled mini-batches. The
/// normalization constants are fitted on `train`; when `test` is given its
/// accuracy is recorded as the `test_accuracy` metric.
pub fn train_classifier(
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    config: ClassifierConfig,
    hyper: &TrainConfig,
    mut progress: impl FnMut(&TrainProgress),
) -> Result<Classifier<f32>> {
    if train.classes() != config.classes {
        return Err(Error::invalid("train_classifier", "dataset class count differs from config"));
    }
    if train.image_shape() != config.input {
        return Err(Error::invalid("train_classifier", "dataset image shape differs from config"));
    }
    let normalization = Normalization::fit(train)?;
    let mut model = Classifier::new(config, normalization, hyper.seed)?;
    let mut adam = AdamState::new(hyper.adam, model.params());
    let mut batches = BatchIterator::new(train, hyper.batch_size, rng::derive_seed(hyper.seed, 1))?;
    let dropout_base = rng::derive_seed(hyper.seed, 2);
    let mut last = f64::NAN;
    for epoch in 0..hyper.epochs {
        for batch in batches.next_epoch() {
            // A single-sample batch cannot produce batch statistics.
            if batch.labels.len() < 2 {
                continue;
            }
            let step = adam.step_count();
            last = train_step(
                &mut model,
                &mut adam,
                &batch.images,
                &batch.labels,
                rng::derive_seed(dropout_base, step),
            )?;
            progress(&TrainProgress {
                epoch,
                step: adam.step_count(),
                loss: last,
            });
        }
    }
    model.metrics.insert("epochs".to_string(), hyper.epochs as f64);
    model.metrics.insert("final_train_loss".to_string(), last);
    if let Some(test) = test {
        let accuracy = model.accuracy(test, 500)?;
        model.metrics.insert("test_accuracy".to_string(), accuracy);
    }
    Ok(model)
}
