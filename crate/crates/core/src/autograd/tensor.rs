use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;
use crate::rng;
use crate::{Error, Result};

/// Initial contents for [`Tensor::create`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// Independent normal draws from the seeded xoshiro256++ stream
    /// (see [`crate::rng`]).
    Normal { mean: f64, std: f64, seed: u64 },
}

/// Dense row-major n-dimensional array with an optional gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub(crate) fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
        });
    }
    Ok(shape.iter().product())
}

impl<T: Real> Tensor<T> {
    pub fn create(shape: &[usize], init: Init) -> Result<Self> {
        let len = validate_shape(shape)?;
        let data = match init {
            Init::Zeros => vec![T::zero(); len],
            Init::Ones => vec![T::one(); len],
            Init::Constant(c) => vec![T::cast(c); len],
            Init::Normal { mean, std, seed } => {
                if !(std >= 0.0) {
                    return Err(Error::invalid("create", "normal std must be non-negative"));
                }
                let mut rng = rng::rng(seed);
                (0..len)
                    .map(|_| T::cast(mean + std * rng::normal(&mut rng)))
                    .collect()
            }
        };
        Ok(Self::raw(shape.to_vec(), data))
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = validate_shape(shape)?;
        if len != data.len() {
            return Err(Error::invalid(
                "from_vec",
                alloc::format!("shape {shape:?} needs {len} values, got {}", data.len()),
            ));
        }
        Ok(Self::raw(shape.to_vec(), data))
    }

    pub fn scalar(value: T) -> Self {
        Self::raw(Vec::new(), vec![value])
    }

    pub(crate) fn raw(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::invalid("set_grad", "gradient length differs from data"));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn grad_mut(&mut self) -> &mut Vec<T> {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); len])
    }

    pub(crate) fn accumulate_grad(&mut self, contribution: Vec<T>) {
        debug_assert_eq!(contribution.len(), self.data.len());
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(contribution).for_each(|(g, c)| *g = *g + c),
            None => self.grad = Some(contribution),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = validate_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts the element type, dropping any gradient.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::raw(
            self.shape.clone(),
            self.data.iter().map(|v| U::cast(v.as_f64())).collect(),
        )
        .with_requires_grad(self.requires_grad)
    }
}
