//! Class encodings that drive the generator.
//!
//! A generator input pairs a length-`K` conditioning vector (soft: softmax of
//! normal draws, whose argmax is the implied label; or one-hot) with a `K × K`
//! hot matrix whose label row or column is all ones.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Soft,
    OneHot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningVector {
    values: Vec<f64>,
    kind: ConditionKind,
    label: usize,
}

impl ConditioningVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> ConditionKind {
        self.kind
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn classes(&self) -> usize {
        self.values.len()
    }

    pub fn sample_soft(classes: usize, rng: &mut Rng) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("sample_soft_condition", "need at least two classes"));
        }
        let draws: Vec<f64> = (0..classes).map(|_| rng::normal(rng)).collect();
        let max = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = draws.iter().map(|d| libm::exp(d - max)).collect();
        let total: f64 = exp.iter().sum();
        let values: Vec<f64> = exp.iter().map(|e| e / total).collect();
        let label = argmax(&values);
        Ok(Self {
            values,
            kind: ConditionKind::Soft,
            label,
        })
    }
}

/// Softmax of `K` standard normal draws from the stream seeded by `seed`.
pub fn sample_soft_condition(classes: usize, seed: u64) -> Result<ConditioningVector> {
    ConditioningVector::sample_soft(classes, &mut rng::rng(seed))
}

pub fn one_hot(label: usize, classes: usize) -> Result<ConditioningVector> {
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut values = vec![0.0; classes];
    values[label] = 1.0;
    Ok(ConditioningVector {
        values,
        kind: ConditionKind::OneHot,
        label,
    })
}

/// Index of the largest entry; the first one on ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Row,
    Column,
}

/// How the hot-matrix axis is picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisChoice {
    Row,
    Column,
    /// Uniformly per sample.
    Random,
}

impl AxisChoice {
    pub fn pick(self, rng: &mut Rng) -> Axis {
        match self {
            AxisChoice::Row => Axis::Row,
            AxisChoice::Column => Axis::Column,
            AxisChoice::Random => {
                if rng::below(rng, 2) == 0 {
                    Axis::Row
                } else {
                    Axis::Column
                }
            }
        }
    }
}

/// `K × K` binary mask with row or column `label` set to one.
#[derive(Debug, Clone, PartialEq)]
pub struct HotMatrix {
    values: Vec<f64>,
    classes: usize,
    label: usize,
    axis: Axis,
}

impl HotMatrix {
    pub fn new(label: usize, classes: usize, axis: Axis) -> Result<Self> {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let mut values = vec![0.0; classes * classes];
        for i in 0..classes {
            let idx = match axis {
                Axis::Row => label * classes + i,
                Axis::Column => i * classes + label,
            };
            values[idx] = 1.0;
        }
        Ok(Self {
            values,
            classes,
            label,
            axis,
        })
    }

    /// Row-major `K × K` entries.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

/// Builds a hot matrix; with [`AxisChoice::Random`] the axis is drawn from the
/// stream seeded by `seed`.
pub fn hot_matrix(label: usize, classes: usize, axis: AxisChoice, seed: u64) -> Result<HotMatrix> {
    HotMatrix::new(label, classes, axis.pick(&mut rng::rng(seed)))
}
