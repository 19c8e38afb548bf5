//! The classifier under attack, the conditioned generator, and the label
//! encodings that drive it.
//!
//! Both networks keep learnable tensors in one [`ParamStore`] and batch-norm
//! running statistics in another, and are rebuilt from a [`Checkpoint`]
//! by name.
//!
//! [`ParamStore`]: crate::autograd::ParamStore

mod checkpoint;
mod classifier;
mod conditioning;
mod generator;
mod layers;
mod train;

pub use checkpoint::{Architecture, Checkpoint, Descriptor, NamedTensor, TensorData, CHECKPOINT_VERSION};
pub use classifier::{Classifier, ClassifierConfig, ClassifierOutput, Downsample};
pub use conditioning::{
    argmax, hot_matrix, one_hot, sample_soft_condition, Axis, AxisChoice, ConditionKind, ConditioningVector, HotMatrix,
};
pub use generator::{pack_conditions, Generator, GeneratorConfig, GeneratorOutput, UpLayer};
pub use train::{train_classifier, train_step, TrainConfig, TrainProgress};
