use alloc::format;
use alloc::vec::Vec;

use crate::autograd::{BatchNormMode, Init, ParamId, ParamStore, Tape, Tensor, Var};
use crate::real::Real;
use crate::rng;
use crate::Result;

/// Training-time or frozen access to batch-norm running statistics.
pub(crate) enum Stats<'a, T> {
    Frozen(&'a ParamStore<T>),
    Update { buffers: &'a mut ParamStore<T>, momentum: f64 },
}

/// Registers layers under `prefix`, drawing initial weights from seeded
/// streams so that construction is reproducible.
pub(crate) struct Builder<'a, T> {
    pub params: &'a mut ParamStore<T>,
    pub buffers: &'a mut ParamStore<T>,
    pub prefix: &'static str,
    pub seed: u64,
    pub slope: f64,
}

/// He-normal scale for a leaky-ReLU network with the given fan-in.
fn he_std(fan_in: usize, slope: f64) -> f64 {
    libm::sqrt(2.0 / ((1.0 + slope * slope) * fan_in as f64))
}

impl<T: Real> Builder<'_, T> {
    fn weight(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let seed = rng::derive_seed(self.seed, self.params.len() as u64);
        let tensor = Tensor::create(shape, Init::Normal { mean: 0.0, std, seed })?;
        self.params.add(format!("{}.{name}.weight", self.prefix), tensor)
    }

    fn zeros(&mut self, name: &str, what: &str, len: usize) -> Result<ParamId> {
        self.params
            .add(format!("{}.{name}.{what}", self.prefix), Tensor::create(&[len], Init::Zeros)?)
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize) -> Result<Conv> {
        let std = he_std(cin * kernel * kernel, self.slope);
        Ok(Conv {
            weight: self.weight(name, &[cout, cin, kernel, kernel], std)?,
            bias: self.zeros(name, "bias", cout)?,
            stride,
            padding,
            transposed: false,
        })
    }

    pub fn conv_transpose(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Conv> {
        // Each output pixel sees about cin·k²/stride² inputs.
        let fan_in = (cin * kernel * kernel / (stride * stride)).max(1);
        let std = he_std(fan_in, self.slope);
        Ok(Conv {
            weight: self.weight(name, &[cin, cout, kernel, kernel], std)?,
            bias: self.zeros(name, "bias", cout)?,
            stride,
            padding,
            transposed: true,
        })
    }

    pub fn dense(&mut self, name: &str, inputs: usize, outputs: usize) -> Result<Dense> {
        let std = he_std(inputs, self.slope);
        Ok(Dense {
            weight: self.weight(name, &[outputs, inputs], std)?,
            bias: self.zeros(name, "bias", outputs)?,
        })
    }

    pub fn norm(&mut self, name: &str, channels: usize, eps: f64) -> Result<Norm> {
        let gamma = self
            .params
            .add(format!("{}.{name}.gamma", self.prefix), Tensor::create(&[channels], Init::Ones)?)?;
        let beta = self.zeros(name, "beta", channels)?;
        let running_mean = self.buffers.add(
            format!("{}.{name}.running_mean", self.prefix),
            Tensor::create(&[channels], Init::Zeros)?,
        )?;
        let running_var = self.buffers.add(
            format!("{}.{name}.running_var", self.prefix),
            Tensor::create(&[channels], Init::Ones)?,
        )?;
        Ok(Norm {
            gamma,
            beta,
            running_mean,
            running_var,
            eps,
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    padding: usize,
    transposed: bool,
}

impl Conv {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, bound: &[Var], x: Var) -> Result<Var> {
        let (w, b) = (bound[self.weight.index()], bound[self.bias.index()]);
        if self.transposed {
            tape.conv_transpose2d(x, w, b, self.stride, self.padding)
        } else {
            tape.conv2d(x, w, b, self.stride, self.padding)
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, bound: &[Var], x: Var) -> Result<Var> {
        tape.linear(x, bound[self.weight.index()], bound[self.bias.index()])
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Norm {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    eps: f64,
}

impl Norm {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, bound: &[Var], x: Var, stats: &mut Stats<'_, T>) -> Result<Var> {
        let (gamma, beta) = (bound[self.gamma.index()], bound[self.beta.index()]);
        match stats {
            Stats::Frozen(buffers) => {
                let mode = BatchNormMode::Eval {
                    running_mean: buffers.get(self.running_mean).data(),
                    running_var: buffers.get(self.running_var).data(),
                };
                tape.batch_norm2d(x, gamma, beta, mode, self.eps)
            }
            Stats::Update { buffers, momentum } => {
                let (mean, var) = buffers.get_pair_mut(self.running_mean, self.running_var);
                let mode = BatchNormMode::Train {
                    running_mean: mean.data_mut(),
                    running_var: var.data_mut(),
                    momentum: *momentum,
                };
                tape.batch_norm2d(x, gamma, beta, mode, self.eps)
            }
        }
    }
}

/// Spatial extent after a convolution.
pub(crate) fn conv_extent(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    (size + 2 * padding).checked_sub(kernel).map(|v| v / stride + 1)
}

/// Spatial extent after a transposed convolution.
pub(crate) fn conv_transpose_extent(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    ((size.checked_sub(1)?) * stride + kernel).checked_sub(2 * padding).filter(|v| *v > 0)
}

pub(crate) fn named_tensors<T: Real>(stores: &[&ParamStore<T>]) -> Vec<super::NamedTensor> {
    stores
        .iter()
        .flat_map(|s| s.iter())
        .map(|p| super::NamedTensor::from_tensor(&p.name, &p.tensor))
        .collect()
}

/// Overwrites every entry of `stores` from `tensors` by name; all names must
/// be present with matching shapes.
pub(crate) fn load_named<T: Real>(stores: &mut [&mut ParamStore<T>], tensors: &[super::NamedTensor]) -> Result<()> {
    use crate::Error;
    for store in stores.iter_mut() {
        for p in store.iter_mut() {
            let found = tensors
                .iter()
                .find(|t| t.name == p.name)
                .ok_or_else(|| Error::UnknownName { name: p.name.clone() })?;
            if found.shape != p.tensor.shape() {
                return Err(Error::shape("load_checkpoint", p.tensor.shape(), &found.shape));
            }
            let requires_grad = p.tensor.requires_grad();
            p.tensor = found.to_tensor::<T>()?.with_requires_grad(requires_grad);
        }
    }
    let expected: usize = stores.iter().map(|s| s.len()).sum();
    if expected != tensors.len() {
        return Err(Error::invalid("load_checkpoint", "checkpoint carries unexpected tensors"));
    }
    Ok(())
}
