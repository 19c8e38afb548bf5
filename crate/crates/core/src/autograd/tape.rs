use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{validate_shape, Tensor};
use crate::real::Real;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded operation.
///
/// Given the gradient of the operation's output, returns the contribution to
/// the gradient of each input that requires one. Closures of the matching
/// signature implement this trait.
pub trait Backward<T: Real> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &[T]) -> Vec<(Var, Vec<T>)>;
}

impl<T, F> Backward<T> for F
where
    T: Real,
    F: Fn(&BackwardCtx<'_, T>, &[T]) -> Vec<(Var, Vec<T>)>,
{
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad: &[T]) -> Vec<(Var, Vec<T>)> {
        self(ctx, grad)
    }
}

/// Read access to the forward values an operation depends on.
pub struct BackwardCtx<'a, T> {
    earlier: &'a [Node<T>],
    output: &'a Tensor<T>,
}

impl<T: Real> BackwardCtx<'_, T> {
    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.earlier[var.0].tensor
    }

    pub fn data(&self, var: Var) -> &[T] {
        self.earlier[var.0].tensor.data()
    }

    pub fn needs_grad(&self, var: Var) -> bool {
        self.earlier[var.0].tensor.requires_grad()
    }

    pub fn output(&self) -> &[T] {
        self.output.data()
    }
}

pub(crate) struct Node<T> {
    tensor: Tensor<T>,
    backward: Option<Box<dyn Backward<T>>>,
}

/// Wengert list for reverse-mode differentiation.
///
/// Operations append nodes in evaluation order, so the node order is a
/// topological order and [`Tape::backward`] walks it once in reverse.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    freed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            freed: false,
        }
    }

    /// Records an input. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.clear_grad();
        self.nodes.push(Node {
            tensor,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records data that never receives a gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        Ok(self.leaf(Tensor::from_vec(shape, data)?))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].tensor
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].tensor.shape()
    }

    pub fn data(&self, var: Var) -> &[T] {
        self.nodes[var.0].tensor.data()
    }

    pub fn grad(&self, var: Var) -> Option<&[T]> {
        self.nodes[var.0].tensor.grad()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].tensor.requires_grad()
    }

    /// First element; meant for scalar results.
    pub fn item(&self, var: Var) -> T {
        self.nodes[var.0].tensor.data()[0]
    }

    /// Appends the result of an operation. The backward closure is kept only
    /// when some input requires a gradient.
    pub(crate) fn push<B>(&mut self, shape: Vec<usize>, data: Vec<T>, inputs: &[Var], backward: B) -> Var
    where
        B: Backward<T> + 'static,
    {
        let requires_grad = inputs.iter().any(|v| self.requires_grad(*v));
        let tensor = Tensor::raw(shape, data).with_requires_grad(requires_grad);
        let backward: Option<Box<dyn Backward<T>>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.nodes.push(Node { tensor, backward });
        Var(self.nodes.len() - 1)
    }

    /// Pass-through node sharing the input's data under a new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let len = validate_shape(shape)?;
        if len != self.value(x).len() {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let data = self.data(x).to_vec();
        Ok(self.push(shape.to_vec(), data, &[x], move |_: &BackwardCtx<'_, T>, g: &[T]| {
            vec![(x, g.to_vec())]
        }))
    }

    /// Populates gradients on every node reachable from `loss` that requires
    /// one. Contributions from multiple uses are summed. The recorded
    /// operations are released afterwards; a second call fails.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.freed {
            return Err(Error::GraphFreed);
        }
        let shape = self.shape(loss);
        if !(shape.is_empty() || shape == [1]) {
            return Err(Error::NotScalar {
                shape: shape.to_vec(),
            });
        }
        if self.requires_grad(loss) {
            self.nodes[loss.0].tensor.grad_mut()[0] = T::one();
            for i in (0..=loss.0).rev() {
                let (earlier, rest) = self.nodes.split_at_mut(i);
                let node = &rest[0];
                let (Some(grad), Some(op)) = (node.tensor.grad(), node.backward.as_ref()) else {
                    continue;
                };
                let ctx = BackwardCtx {
                    earlier,
                    output: &node.tensor,
                };
                let contributions = op.backward(&ctx, grad);
                for (var, contribution) in contributions {
                    let input = &mut earlier[var.0].tensor;
                    if input.requires_grad() {
                        input.accumulate_grad(contribution);
                    }
                }
            }
        }
        for node in &mut self.nodes {
            node.backward = None;
        }
        self.freed = true;
        Ok(())
    }
}
