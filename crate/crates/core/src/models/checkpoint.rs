use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ClassifierConfig, GeneratorConfig};
use crate::autograd::Tensor;
use crate::data::Normalization;
use crate::real::{DType, Real};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Classifier(ClassifierConfig),
    Generator(GeneratorConfig),
}

/// Everything about a model except its tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub architecture: Architecture,
    /// Input-space constants of the classifier (shared by its generators).
    pub normalization: Normalization,
    pub seed: u64,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn from_tensor<T: Real>(name: &str, tensor: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => TensorData::F32(tensor.data().iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => TensorData::F64(tensor.data().iter().map(|v| v.as_f64()).collect()),
        };
        Self {
            name: name.into(),
            shape: tensor.shape().to_vec(),
            data,
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = match &self.data {
            TensorData::F32(v) => v.iter().map(|x| T::cast(f64::from(*x))).collect(),
            TensorData::F64(v) => v.iter().map(|x| T::cast(*x)).collect(),
        };
        if self.shape.is_empty() {
            return match data.as_slice() {
                [v] => Ok(Tensor::scalar(*v)),
                _ => Err(Error::invalid("load_checkpoint", "scalar tensor needs one value")),
            };
        }
        Tensor::from_vec(&self.shape, data)
    }
}

/// Serialized model: descriptor plus named parameter and buffer tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub descriptor: Descriptor,
    pub tensors: Vec<NamedTensor>,
}
