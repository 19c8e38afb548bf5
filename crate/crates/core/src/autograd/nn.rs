//! Layer primitives: dense, batch normalization, activations, pooling and
//! the softmax family.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use super::tape::{BackwardCtx, Tape, Var};
use crate::real::Real;
use crate::rng;
use crate::{Error, Result};

/// Train or eval behaviour for batch normalization.
pub enum BatchNormMode<'a, T> {
    /// Normalize with batch statistics and fold them into the running
    /// averages: `running = (1 − momentum)·running + momentum·batch`.
    Train {
        running_mean: &'a mut [T],
        running_var: &'a mut [T],
        momentum: f64,
    },
    /// Normalize with the running statistics only.
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
    },
}

fn rows_of(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [b, k] => Ok((*b, *k)),
        _ => Err(Error::invalid(op, alloc::format!("expected rank 2, got {shape:?}"))),
    }
}

impl<T: Real> Tape<T> {
    /// `input [B, F]`, `weight [O, F]`, `bias [O]` → `[B, O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (batch, features) = rows_of("linear", self.shape(input))?;
        let (outputs, wf) = rows_of("linear", self.shape(weight))?;
        if wf != features {
            return Err(Error::shape("linear", &[outputs, features], self.shape(weight)));
        }
        if self.shape(bias) != [outputs] {
            return Err(Error::shape("linear", &[outputs], self.shape(bias)));
        }
        let mut out = vec![T::zero(); batch * outputs];
        for row in out.chunks_mut(outputs) {
            row.copy_from_slice(self.data(bias));
        }
        T::gemm(
            batch,
            features,
            outputs,
            T::one(),
            self.data(input),
            (features, 1),
            self.data(weight),
            (1, features),
            T::one(),
            &mut out,
            (outputs, 1),
        );
        Ok(self.push(vec![batch, outputs], out, &[input, weight, bias], move |ctx: &BackwardCtx<'_, T>, g: &[T]| {
            let mut out = Vec::with_capacity(3);
            if ctx.needs_grad(input) {
                let mut gx = vec![T::zero(); batch * features];
                let w = ctx.data(weight);
                T::gemm(batch, outputs, features, T::one(), g, (outputs, 1), w, (features, 1), T::zero(), &mut gx, (features, 1));
                out.push((input, gx));
            }
            if ctx.needs_grad(weight) {
                let mut gw = vec![T::zero(); outputs * features];
                let x = ctx.data(input);
                T::gemm(outputs, batch, features, T::one(), g, (1, outputs), x, (features, 1), T::zero(), &mut gw, (features, 1));
                out.push((weight, gw));
            }
            if ctx.needs_grad(bias) {
                let mut gb = vec![T::zero(); outputs];
                for row in g.chunks(outputs) {
                    gb.iter_mut().zip(row).for_each(|(a, v)| *a = *a + *v);
                }
                out.push((bias, gb));
            }
            out
        }))
    }

    /// Per-channel normalization of `[B, C, H, W]` followed by `gamma · x̂ + beta`.
    pub fn batch_norm2d(&mut self, input: Var, gamma: Var, beta: Var, mode: BatchNormMode<'_, T>, eps: f64) -> Result<Var> {
        const OP: &str = "batch_norm2d";
        let shape = self.shape(input).to_vec();
        let [batch, channels, h, w] = <[usize; 4]>::try_from(shape.as_slice())
            .map_err(|_| Error::invalid(OP, "input must be rank 4"))?;
        if self.shape(gamma) != [channels] || self.shape(beta) != [channels] {
            return Err(Error::shape(OP, &[channels], self.shape(gamma)));
        }
        let plane = h * w;
        let count = batch * plane;
        let x = self.data(input);
        let train = matches!(mode, BatchNormMode::Train { .. });
        if train && count < 2 {
            return Err(Error::invalid(OP, "train mode needs at least two values per channel"));
        }
        let mut inv_std = vec![T::zero(); channels];
        let mut mean = vec![0.0f64; channels];
        match mode {
            BatchNormMode::Train {
                running_mean,
                running_var,
                momentum,
            } => {
                if running_mean.len() != channels || running_var.len() != channels {
                    return Err(Error::invalid(OP, "running statistics length differs from channels"));
                }
                let mut sum = vec![0.0f64; channels];
                for (i, chunk) in x.chunks(plane).enumerate() {
                    sum[i % channels] += chunk.iter().map(|v| v.as_f64()).sum::<f64>();
                }
                sum.iter_mut().for_each(|s| *s /= count as f64);
                let mut ss = vec![0.0f64; channels];
                for (i, chunk) in x.chunks(plane).enumerate() {
                    let mu = sum[i % channels];
                    ss[i % channels] += chunk.iter().map(|v| (v.as_f64() - mu) * (v.as_f64() - mu)).sum::<f64>();
                }
                for c in 0..channels {
                    let mu = sum[c];
                    let var = ss[c] / count as f64;
                    mean[c] = mu;
                    inv_std[c] = T::cast(1.0 / Float::sqrt(var + eps));
                    let unbiased = ss[c] / (count - 1) as f64;
                    running_mean[c] = T::cast((1.0 - momentum) * running_mean[c].as_f64() + momentum * mu);
                    running_var[c] = T::cast((1.0 - momentum) * running_var[c].as_f64() + momentum * unbiased);
                }
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
            } => {
                if running_mean.len() != channels || running_var.len() != channels {
                    return Err(Error::invalid(OP, "running statistics length differs from channels"));
                }
                for c in 0..channels {
                    mean[c] = running_mean[c].as_f64();
                    inv_std[c] = T::cast(1.0 / Float::sqrt(running_var[c].as_f64() + eps));
                }
            }
        }
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        let (gm, bt) = (self.data(gamma), self.data(beta));
        for (i, ((chunk, xh), o)) in x
            .chunks(plane)
            .zip(xhat.chunks_mut(plane))
            .zip(out.chunks_mut(plane))
            .enumerate()
        {
            let c = i % channels;
            let (mu, k) = (T::cast(mean[c]), inv_std[c]);
            for ((v, xh), o) in chunk.iter().zip(xh.iter_mut()).zip(o.iter_mut()) {
                *xh = (*v - mu) * k;
                *o = gm[c] * *xh + bt[c];
            }
        }
        Ok(self.push(shape, out, &[input, gamma, beta], move |ctx: &BackwardCtx<'_, T>, g: &[T]| {
            let gm = ctx.data(gamma);
            let mut sum_g = vec![T::zero(); channels];
            let mut sum_gx = vec![T::zero(); channels];
            for (i, (chunk, xh)) in g.chunks(plane).zip(xhat.chunks(plane)).enumerate() {
                let c = i % channels;
                sum_g[c] = sum_g[c] + chunk.iter().fold(T::zero(), |a, v| a + *v);
                sum_gx[c] = sum_gx[c] + chunk.iter().zip(xh).fold(T::zero(), |a, (v, x)| a + *v * *x);
            }
            let mut out = Vec::with_capacity(3);
            if ctx.needs_grad(input) {
                let mut gx = vec![T::zero(); g.len()];
                let inv_n = T::cast(1.0 / count as f64);
                for (i, ((chunk, xh), dst)) in g
                    .chunks(plane)
                    .zip(xhat.chunks(plane))
                    .zip(gx.chunks_mut(plane))
                    .enumerate()
                {
                    let c = i % channels;
                    let k = gm[c] * inv_std[c];
                    if train {
                        let (mg, mgx) = (sum_g[c] * inv_n, sum_gx[c] * inv_n);
                        for ((d, v), x) in dst.iter_mut().zip(chunk).zip(xh) {
                            *d = k * (*v - mg - *x * mgx);
                        }
                    } else {
                        for (d, v) in dst.iter_mut().zip(chunk) {
                            *d = k * *v;
                        }
                    }
                }
                out.push((input, gx));
            }
            if ctx.needs_grad(gamma) {
                out.push((gamma, sum_gx));
            }
            if ctx.needs_grad(beta) {
                out.push((beta, sum_g));
            }
            out
        }))
    }

    pub fn leaky_relu(&mut self, x: Var, negative_slope: f64) -> Result<Var> {
        if !(negative_slope > 0.0 && negative_slope < 1.0) {
            return Err(Error::invalid("leaky_relu", "negative slope must lie in (0, 1)"));
        }
        let slope = T::cast(negative_slope);
        let data = self
            .data(x)
            .iter()
            .map(|v| if *v >= T::zero() { *v } else { *v * slope })
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, &[x], move |ctx: &BackwardCtx<'_, T>, g: &[T]| {
            let gx = g
                .iter()
                .zip(ctx.data(x))
                .map(|(g, v)| if *v >= T::zero() { *g } else { *g * slope })
                .collect();
            vec![(x, gx)]
        }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self
            .data(x)
            .iter()
            .map(|v| {
                if *v >= T::zero() {
                    T::one() / (T::one() + (-*v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, data, &[x], move |ctx: &BackwardCtx<'_, T>, g: &[T]| {
            let gx = g
                .iter()
                .zip(ctx.output())
                .map(|(g, y)| *g * *y * (T::one() - *y))
                .collect();
            vec![(x, gx)]
        })
    }

    /// Inverted dropout: in training each element is zeroed with probability
    /// `p` and survivors are scaled by `1 / (1 − p)`; otherwise the input is
    /// returned unchanged. The mask is a pure function of `seed`.
    pub fn dropout(&mut self, x: Var, p: f64, train: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", "p must lie in [0, 1)"));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = T::cast(1.0 / (1.0 - p));
        let mut rng = rng::rng(seed);
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng::uniform(&mut rng) < p { T::zero() } else { keep })
            .collect();
        let data = self.data(x).iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, &[x], move |_: &BackwardCtx<'_, T>, g: &[T]| {
            vec![(x, g.iter().zip(&mask).map(|(g, m)| *g * *m).collect())]
        }))
    }

    /// Non-overlapping `size × size` max pooling on `[B, C, H, W]`; trailing
    /// rows/columns that do not fill a window are dropped.
    pub fn max_pool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [batch, channels, h, w] = <[usize; 4]>::try_from(shape.as_slice())
            .map_err(|_| Error::invalid("max_pool2d", "input must be rank 4"))?;
        if size == 0 || h < size || w < size {
            return Err(Error::invalid("max_pool2d", "window larger than input"));
        }
        if shape.iter().product::<usize>() > u32::MAX as usize {
            return Err(Error::invalid("max_pool2d", "input too large"));
        }
        let (oh, ow) = (h / size, w / size);
        let data = self.data(x);
        let mut out = Vec::with_capacity(batch * channels * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..batch * channels {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let corner = base + oy * size * w + ox * size;
                    let (mut best, mut value) = (corner, data[corner]);
                    for i in 0..size {
                        let row = corner + i * w;
                        for (j, v) in data[row..row + size].iter().enumerate() {
                            // Select rather than branch: the comparison is unpredictable.
                            let take = *v > value;
                            best = if take { row + j } else { best };
                            value = if take { *v } else { value };
                        }
                    }
                    out.push(value);
                    argmax.push(best as u32);
                }
            }
        }
        let len = data.len();
        Ok(self.push(vec![batch, channels, oh, ow], out, &[x], move |_: &BackwardCtx<'_, T>, g: &[T]| {
            let mut gx = vec![T::zero(); len];
            for (g, &i) in g.iter().zip(&argmax) {
                gx[i as usize] = gx[i as usize] + *g;
            }
            vec![(x, gx)]
        }))
    }

    /// Row-wise softmax of `[B, K]`, stabilized by subtracting the row max.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (_, k) = rows_of("softmax", self.shape(x))?;
        let data = softmax_rows(self.data(x), k);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, &[x], move |ctx: &BackwardCtx<'_, T>, g: &[T]| {
            let y = ctx.output();
            let mut gx = Vec::with_capacity(g.len());
            for (gr, yr) in g.chunks(k).zip(y.chunks(k)) {
                let dot = gr.iter().zip(yr).fold(T::zero(), |a, (g, y)| a + *g * *y);
                gx.extend(gr.iter().zip(yr).map(|(g, y)| *y * (*g - dot)));
            }
            vec![(x, gx)]
        }))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (_, k) = rows_of("log_softmax", self.shape(x))?;
        let data = log_softmax_rows(self.data(x), k);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, &[x], move |ctx: &BackwardCtx<'_, T>, g: &[T]| {
            let y = ctx.output();
            let mut gx = Vec::with_capacity(g.len());
            for (gr, yr) in g.chunks(k).zip(y.chunks(k)) {
                let total = gr.iter().fold(T::zero(), |a, v| a + *v);
                gx.extend(gr.iter().zip(yr).map(|(g, y)| *g - y.exp() * total));
            }
            vec![(x, gx)]
        }))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy_logits(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (batch, k) = rows_of("cross_entropy_logits", self.shape(logits))?;
        if labels.len() != batch {
            return Err(Error::shape("cross_entropy_logits", &[batch], &[labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let logp = log_softmax_rows(self.data(logits), k);
        let nll = labels
            .iter()
            .enumerate()
            .map(|(b, &l)| -logp[b * k + l].as_f64())
            .sum::<f64>()
            / batch as f64;
        let labels = labels.to_vec();
        Ok(self.push(Vec::new(), vec![T::cast(nll)], &[logits], move |_: &BackwardCtx<'_, T>, g: &[T]| {
            let scale = g[0] / T::cast(batch as f64);
            let mut gx: Vec<T> = logp.iter().map(|lp| lp.exp() * scale).collect();
            for (b, &l) in labels.iter().enumerate() {
                gx[b * k + l] = gx[b * k + l] - scale;
            }
            vec![(logits, gx)]
        }))
    }
}

pub(crate) fn softmax_rows<T: Real>(x: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(k) {
        let max = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
        let start = out.len();
        out.extend(row.iter().map(|v| (*v - max).exp()));
        let total = out[start..].iter().fold(T::zero(), |a, v| a + *v);
        out[start..].iter_mut().for_each(|v| *v = *v / total);
    }
    out
}

pub(crate) fn log_softmax_rows<T: Real>(x: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(k) {
        let max = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
        let lse = row.iter().fold(T::zero(), |a, v| a + (*v - max).exp()).ln() + max;
        out.extend(row.iter().map(|v| *v - lse));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{Init, Tensor};
    use super::*;

    #[test]
    fn linear_matches_definition() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = tape.constant(&[1, 2], vec![3.0, 4.0]).unwrap();
        let b = tape.constant(&[1], vec![5.0]).unwrap();
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.data(y), &[16.0]);

        let x = tape.constant(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let eye = tape.constant(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let zero = tape.constant(&[3], vec![0.0; 3]).unwrap();
        let y = tape.linear(x, eye, zero).unwrap();
        assert_eq!(tape.data(y), tape.data(x));
        assert!(tape.linear(x, w, b).is_err());
    }

    #[test]
    fn leaky_relu_values_and_slopes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![5.0, -2.0]).unwrap().with_requires_grad(true));
        let y = tape.leaky_relu(x, 0.01).unwrap();
        assert_eq!(tape.data(y)[0], 5.0);
        assert!((tape.data(y)[1] + 0.02).abs() < 1e-15);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.01]);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[1], vec![1.0]).unwrap();
        assert!(tape.leaky_relu(x, 1.5).is_err());
    }

    #[test]
    fn softmax_basics() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[2, 2], vec![0.0, 0.0, 1000.0, 0.0]).unwrap();
        let y = tape.softmax(x).unwrap();
        assert_eq!(&tape.data(y)[..2], &[0.5, 0.5]);
        assert!((tape.data(y)[2] - 1.0).abs() < 1e-12);
        assert!(tape.data(y)[3] >= 0.0 && tape.data(y)[3] < 1e-300);
        assert!(tape.data(y).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dropout_identity_cases_and_errors() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::create(&[4, 4], Init::Ones).unwrap());
        assert_eq!(tape.dropout(x, 0.0, true, 1).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.7, false, 1).unwrap(), x);
        assert!(tape.dropout(x, 1.0, true, 1).is_err());
        let a = tape.dropout(x, 0.5, true, 9).unwrap();
        let b = tape.dropout(x, 0.5, true, 9).unwrap();
        assert_eq!(tape.data(a), tape.data(b));
        assert!(tape.data(a).iter().all(|v| *v == 0.0 || *v == 2.0));
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::create(&[1_000_000], Init::Ones).unwrap());
        let y = tape.dropout(x, 0.5, true, 42).unwrap();
        let mean = tape.data(y).iter().sum::<f64>() / 1e6;
        // 3σ band for the mean of 10^6 draws from {0, 2}: 3 · 1 / 1000.
        assert!((mean - 1.0).abs() < 0.003, "mean {mean}");
    }

    #[test]
    fn batch_norm_train_normalizes_and_updates_running_stats() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::create(&[4, 3, 5, 5], Init::Normal { mean: 2.0, std: 3.0, seed: 5 }).unwrap());
        let gamma = tape.constant(&[3], vec![1.0; 3]).unwrap();
        let beta = tape.constant(&[3], vec![0.0; 3]).unwrap();
        let (mut rm, mut rv) = (vec![0.0; 3], vec![1.0; 3]);
        let y = tape
            .batch_norm2d(
                x,
                gamma,
                beta,
                BatchNormMode::Train { running_mean: &mut rm, running_var: &mut rv, momentum: 0.1 },
                1e-5,
            )
            .unwrap();
        let data = tape.data(y);
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|b| data[(b * 3 + c) * 25..][..25].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 100.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5, "var {var}");
        }
        assert!(rm.iter().all(|m| (*m - 0.2).abs() < 0.1));
        assert!(rv.iter().all(|v| *v > 1.0));
    }

    #[test]
    fn batch_norm_eval_with_unit_stats_is_identity() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::create(&[2, 2, 3, 3], Init::Normal { mean: 0.0, std: 1.0, seed: 5 }).unwrap());
        let gamma = tape.constant(&[2], vec![1.0; 2]).unwrap();
        let beta = tape.constant(&[2], vec![0.0; 2]).unwrap();
        let (rm, rv) = (vec![0.0; 2], vec![1.0; 2]);
        let y = tape
            .batch_norm2d(x, gamma, beta, BatchNormMode::Eval { running_mean: &rm, running_var: &rv }, 1e-5)
            .unwrap();
        for (a, b) in tape.data(y).iter().zip(tape.data(x)) {
            assert!((a - b).abs() < 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn batch_norm_train_rejects_single_value() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let gamma = tape.constant(&[1], vec![1.0]).unwrap();
        let beta = tape.constant(&[1], vec![0.0]).unwrap();
        let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
        let mode = BatchNormMode::Train { running_mean: &mut rm, running_var: &mut rv, momentum: 0.1 };
        assert!(tape.batch_norm2d(x, gamma, beta, mode, 1e-5).is_err());
    }

    #[test]
    fn max_pool_picks_window_maximum() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(
            Tensor::from_vec(&[1, 1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 6.0]).unwrap().with_requires_grad(true),
        );
        let y = tape.max_pool2d(x, 2).unwrap();
        assert_eq!(tape.data(y), &[5.0, 7.0]);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&[2, 10], vec![0.3; 20]).unwrap();
        let l = tape.cross_entropy_logits(x, &[1, 9]).unwrap();
        assert!((tape.item(l) - 10f64.ln()).abs() < 1e-12);
        assert!(matches!(
            tape.cross_entropy_logits(x, &[1, 10]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }
}
