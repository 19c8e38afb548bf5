//! Shape-preserving arithmetic, reductions and concatenation.

use alloc::vec;
use alloc::vec::Vec;

use super::tape::{BackwardCtx, Tape, Var};
use crate::real::Real;
use crate::{Error, Result};

impl<T: Real> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| *x + *y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, &[a, b], move |_: &BackwardCtx<'_, T>, g: &[T]| {
            vec![(a, g.to_vec()), (b, g.to_vec())]
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| *x - *y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, &[a, b], move |_: &BackwardCtx<'_, T>, g: &[T]| {
            vec![(a, g.to_vec()), (b, g.iter().map(|v| -*v).collect())]
        }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| *x * *y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, &[a, b], move |ctx: &BackwardCtx<'_, T>, g: &[T]| {
            let mut out = Vec::with_capacity(2);
            if ctx.needs_grad(a) {
                out.push((a, g.iter().zip(ctx.data(b)).map(|(g, y)| *g * *y).collect()));
            }
            if ctx.needs_grad(b) {
                out.push((b, g.iter().zip(ctx.data(a)).map(|(g, x)| *g * *x).collect()));
            }
            out
        }))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let data = self.data(x).iter().map(|v| *v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, data, &[x], move |_: &BackwardCtx<'_, T>, g: &[T]| {
            vec![(x, g.iter().map(|v| *v * factor).collect())]
        })
    }

    pub fn add_scalar(&mut self, x: Var, offset: T) -> Var {
        let data = self.data(x).iter().map(|v| *v + offset).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, data, &[x], move |_: &BackwardCtx<'_, T>, g: &[T]| {
            vec![(x, g.to_vec())]
        })
    }

    /// Sum of all elements, as a scalar of shape `[]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.data(x).iter().fold(T::zero(), |acc, v| acc + *v);
        let n = self.value(x).len();
        self.push(Vec::new(), vec![total], &[x], move |_: &BackwardCtx<'_, T>, g: &[T]| {
            vec![(x, vec![g[0]; n])]
        })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, T::one() / T::cast(n as f64))
    }

    /// `Σ weight_i · term_i` over scalar terms, accumulated in `f64`.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0f64;
        for (v, w) in terms {
            if self.value(*v).len() != 1 {
                return Err(Error::NotScalar {
                    shape: self.shape(*v).to_vec(),
                });
            }
            total += w * self.item(*v).as_f64();
        }
        let inputs: Vec<Var> = terms.iter().map(|(v, _)| *v).collect();
        let terms = terms.to_vec();
        Ok(self.push(Vec::new(), vec![T::cast(total)], &inputs, move |_: &BackwardCtx<'_, T>, g: &[T]| {
            terms.iter().map(|(v, w)| (*v, vec![g[0] * T::cast(*w)])).collect()
        }))
    }

    /// Concatenates along dimension 1. All parts must agree on dimension 0;
    /// trailing dimensions after 1 must agree as well.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Empty { op: "concat" });
        };
        let base = self.shape(first).to_vec();
        if base.len() < 2 {
            return Err(Error::invalid("concat", "inputs need at least two dimensions"));
        }
        let outer = base[0];
        let tail: Vec<usize> = base[2..].to_vec();
        let inner: usize = tail.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            if s.len() != base.len() || s[0] != outer || s[2..] != tail[..] {
                return Err(Error::shape("concat", &base, s));
            }
            widths.push(s[1] * inner);
        }
        let row: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * row);
        for b in 0..outer {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(*p)[b * w..(b + 1) * w]);
            }
        }
        let mut shape = base.clone();
        shape[1] = row / inner;
        let parts = parts.to_vec();
        Ok(self.push(shape, data, &parts.clone(), move |ctx: &BackwardCtx<'_, T>, g: &[T]| {
            let mut out = Vec::new();
            let mut offset = 0;
            for (p, w) in parts.iter().zip(&widths) {
                if ctx.needs_grad(*p) {
                    let mut gp = Vec::with_capacity(outer * w);
                    for b in 0..outer {
                        let start = b * row + offset;
                        gp.extend_from_slice(&g[start..start + w]);
                    }
                    out.push((*p, gp));
                }
                offset += w;
            }
            out
        }))
    }

    /// Per-channel affine map `y = x · scale[c] + shift[c]` on `[B, C, ...]`
    /// with constant coefficients.
    pub fn channel_affine(&mut self, x: Var, scale: &[T], shift: &[T]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || shape[1] != scale.len() || scale.len() != shift.len() {
            return Err(Error::invalid("channel_affine", "coefficient count must match channels"));
        }
        let channels = shape[1];
        let inner: usize = shape[2..].iter().product();
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = (i / inner) % channels;
                *v * scale[c] + shift[c]
            })
            .collect();
        let scale = scale.to_vec();
        Ok(self.push(shape, data, &[x], move |_: &BackwardCtx<'_, T>, g: &[T]| {
            let gx = g
                .iter()
                .enumerate()
                .map(|(i, g)| *g * scale[(i / inner) % channels])
                .collect();
            vec![(x, gx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;
    use super::*;

    #[test]
    fn concat_interleaves_rows_and_splits_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_vec(&[2, 1], vec![1.0, 2.0]).unwrap().with_requires_grad(true));
        let b = tape.leaf(Tensor::from_vec(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap().with_requires_grad(true));
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), &[2, 3]);
        assert_eq!(tape.data(c), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = tape.constant(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = tape.mul(c, w).unwrap();
        let loss = tape.sum(p);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0, 4.0]);
        assert_eq!(tape.grad(b).unwrap(), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn mismatched_shapes_error() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(&[2], vec![1.0, 2.0]).unwrap();
        let b = tape.constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(tape.add(a, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn weighted_sum_is_exact_combination() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(&[], vec![0.5]).unwrap();
        let b = tape.constant(&[], vec![1.0]).unwrap();
        let c = tape.constant(&[], vec![-0.2]).unwrap();
        let t = tape.weighted_sum(&[(a, 1.0), (b, 1.0), (c, 1.0)]).unwrap();
        assert!((tape.item(t) - 1.3).abs() < 1e-15);
    }
}
