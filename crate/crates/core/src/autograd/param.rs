use alloc::string::String;
use alloc::vec::Vec;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::real::Real;
use crate::{Error, Result};

/// A named trainable tensor, e.g. `classifier.conv1.weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of uniquely named tensors.
///
/// Models keep one store for trainable parameters and one for buffers such as
/// batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<Parameter<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|p| p.name == name) {
            return Err(Error::DuplicateName { name });
        }
        self.entries.push(Parameter { name, tensor });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    /// Two distinct entries borrowed mutably at once.
    pub fn get_pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut Tensor<T>, &mut Tensor<T>) {
        assert_ne!(a.0, b.0, "get_pair_mut needs distinct ids");
        if a.0 < b.0 {
            let (lo, hi) = self.entries.split_at_mut(b.0);
            (&mut lo[a.0].tensor, &mut hi[0].tensor)
        } else {
            let (lo, hi) = self.entries.split_at_mut(a.0);
            (&mut hi[0].tensor, &mut lo[b.0].tensor)
        }
    }

    pub fn find(&self, name: &str) -> Option<&Parameter<T>> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn find_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.entries.iter_mut().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.entries.iter_mut()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|p| p.tensor.len()).sum()
    }

    /// Records every entry as a leaf. With `track` false the leaves are
    /// constants and no gradient flows into them.
    pub fn bind(&self, tape: &mut Tape<T>, track: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|p| tape.leaf(p.tensor.clone().with_requires_grad(track)))
            .collect()
    }

    /// Copies gradients from a finished backward pass into the store.
    pub fn pull_grads(&mut self, tape: &Tape<T>, bound: &[Var]) {
        for (p, v) in self.entries.iter_mut().zip(bound) {
            match tape.grad(*v) {
                Some(g) => {
                    p.tensor.set_grad(g.to_vec()).expect("bound leaf shares the parameter shape");
                }
                None => p.tensor.clear_grad(),
            }
        }
    }

    pub fn clear_grads(&mut self) {
        self.entries.iter_mut().for_each(|p| p.tensor.clear_grad());
    }

    /// FNV-1a over names, shapes and value bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        for p in &self.entries {
            h.write(p.name.as_bytes());
            for d in p.tensor.shape() {
                h.write(&(*d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                h.write(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h.0
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}
