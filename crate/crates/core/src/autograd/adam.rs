use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use crate::real::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = |p: &super::Parameter<T>| vec![T::zero(); p.tensor.len()];
        Self {
            config,
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter. Fails without touching
    /// anything if some parameter has no gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.tensor.grad().is_none()) {
            return Err(Error::MissingGrad { name: p.name.clone() });
        }
        if params.len() != self.m.len() {
            return Err(Error::invalid("adam", "parameter count changed since construction"));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - Float::powi(c.beta1, t);
        let correction2 = 1.0 - Float::powi(c.beta2, t);
        let (b1, b2) = (T::cast(c.beta1), T::cast(c.beta2));
        let (one_b1, one_b2) = (T::cast(1.0 - c.beta1), T::cast(1.0 - c.beta2));
        let step_size = T::cast(c.lr / correction1);
        let root_c2 = T::cast(Float::sqrt(correction2));
        let eps = T::cast(c.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.tensor.take_grad().expect("checked above");
            for (((w, g), m), v) in p.tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + one_b1 * *g;
                *v = b2 * *v + one_b2 * *g * *g;
                // lr·m̂ / (√v̂ + ε) with m̂ = m / c1 and v̂ = v / c2
                *w = *w - step_size * *m / (v.sqrt() / root_c2 + eps);
            }
            p.tensor.set_grad(grad).expect("same length");
        }
        Ok(())
    }
}
