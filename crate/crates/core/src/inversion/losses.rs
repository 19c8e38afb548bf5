use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{BackwardCtx, Tape, Var};
use crate::real::Real;
use crate::{Error, Result};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-12;
/// Added to row norms in the cosine loss.
pub const NORM_EPS: f64 = 1e-12;

fn clamp_prob(q: f64) -> f64 {
    q.clamp(PROB_EPS, 1.0)
}

/// Whether the clamp passes gradient at `q`.
fn clamp_open(q: f64) -> bool {
    (PROB_EPS..=1.0).contains(&q)
}

fn probs_shape<T: Real>(tape: &Tape<T>, op: &'static str, probs: Var) -> Result<(usize, usize)> {
    match *tape.shape(probs) {
        [b, k] if b > 0 => Ok((b, k)),
        _ => Err(Error::invalid(op, "probabilities must be [B, K] with B ≥ 1")),
    }
}

/// `Σ_i p_i · ln(p_i / q_i)` per row with `0 · ln 0 = 0`, averaged over rows.
pub fn kl_value(p: &[f64], q: &[f64], classes: usize) -> f64 {
    let rows = p.len() / classes;
    let total: f64 = p
        .iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (libm::log(*p) - libm::log(clamp_prob(*q))))
        .sum();
    total / rows as f64
}

/// Mean cosine similarity over ordered pairs `i ≠ j` of the rows of
/// `features` (`rows × cols`, row-major). Needs at least two rows.
pub fn mean_pairwise_cosine(features: &[f64], rows: usize) -> f64 {
    let cols = features.len() / rows;
    let units = unit_rows(features, cols);
    let mut sum = vec![0.0; cols];
    let mut self_dots = 0.0;
    for u in units.chunks(cols) {
        sum.iter_mut().zip(u).for_each(|(s, v)| *s += v);
        self_dots += u.iter().map(|v| v * v).sum::<f64>();
    }
    let total: f64 = sum.iter().map(|v| v * v).sum();
    (total - self_dots) / (rows * (rows - 1)) as f64
}

/// Rows divided by `‖row‖ + ε`, and the norms.
fn unit_rows(features: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(features.len());
    for row in features.chunks(cols) {
        let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
        out.extend(row.iter().map(|v| v / (norm + NORM_EPS)));
    }
    out
}

impl<T: Real> Tape<T> {
    /// KL divergence from the rows of `target` (data, `[B, K]` row-major) to
    /// the rows of `probs`, averaged over the batch. Differentiable in
    /// `probs` only; `probs` is clamped to `[1e-12, 1]` first.
    pub fn kl_loss(&mut self, target: &[f64], probs: Var) -> Result<Var> {
        const OP: &str = "kl_loss";
        let (b, k) = probs_shape(self, OP, probs)?;
        if target.len() != b * k {
            return Err(Error::shape(OP, &[b, k], &[target.len() / k.max(1), k]));
        }
        let q: Vec<f64> = self.data(probs).iter().map(|v| v.as_f64()).collect();
        let value = kl_value(target, &q, k);
        let p = target.to_vec();
        Ok(self.push(vec![], vec![T::cast(value)], &[probs], move |ctx: &BackwardCtx<'_, T>, g: &[T]| {
            let scale = g[0].as_f64() / b as f64;
            let gq = p
                .iter()
                .zip(ctx.data(probs))
                .map(|(p, q)| {
                    let q = q.as_f64();
                    if *p > 0.0 && clamp_open(q) {
                        T::cast(-scale * p / q)
                    } else {
                        T::zero()
                    }
                })
                .collect();
            vec![(probs, gq)]
        }))
    }

    /// Mean of `−ln q[b, labels[b]]` with the same clamp as [`Tape::kl_loss`].
    pub fn ce_loss(&mut self, labels: &[usize], probs: Var) -> Result<Var> {
        const OP: &str = "ce_loss";
        let (b, k) = probs_shape(self, OP, probs)?;
        if labels.len() != b {
            return Err(Error::shape(OP, &[b], &[labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let q = self.data(probs);
        let value = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -libm::log(clamp_prob(q[i * k + l].as_f64())))
            .sum::<f64>()
            / b as f64;
        let labels = labels.to_vec();
        Ok(self.push(vec![], vec![T::cast(value)], &[probs], move |ctx: &BackwardCtx<'_, T>, g: &[T]| {
            let scale = g[0].as_f64() / b as f64;
            let q = ctx.data(probs);
            let mut gq = vec![T::zero(); q.len()];
            for (i, &l) in labels.iter().enumerate() {
                let v = q[i * k + l].as_f64();
                if clamp_open(v) {
                    gq[i * k + l] = T::cast(-scale / v);
                }
            }
            vec![(probs, gq)]
        }))
    }

    /// Mean cosine similarity over ordered pairs of distinct rows of
    /// `features [B, F]`, with `ε = 1e-12` added to each row norm.
    pub fn cosine_diversity_loss(&mut self, features: Var) -> Result<Var> {
        const OP: &str = "cosine_diversity_loss";
        let (b, f) = match *self.shape(features) {
            [b, f] => (b, f),
            _ => return Err(Error::invalid(OP, "features must be [B, F]")),
        };
        if b < 2 {
            return Err(Error::invalid(OP, "need at least two rows"));
        }
        let x: Vec<f64> = self.data(features).iter().map(|v| v.as_f64()).collect();
        let value = mean_pairwise_cosine(&x, b);
        Ok(self.push(vec![], vec![T::cast(value)], &[features], move |_: &BackwardCtx<'_, T>, g: &[T]| {
            // loss = (‖Σ u‖² − Σ ‖u_i‖²) / (B(B − 1)), u_i = x_i / (n_i + ε)
            let pairs = (b * (b - 1)) as f64;
            let units = unit_rows(&x, f);
            let mut sum = vec![0.0; f];
            for u in units.chunks(f) {
                sum.iter_mut().zip(u).for_each(|(s, v)| *s += v);
            }
            let scale = g[0].as_f64() * 2.0 / pairs;
            let mut gx = Vec::with_capacity(x.len());
            for (row, u) in x.chunks(f).zip(units.chunks(f)) {
                let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
                let gu: Vec<f64> = sum.iter().zip(u).map(|(s, u)| scale * (s - u)).collect();
                let d = norm + NORM_EPS;
                let dot: f64 = row.iter().zip(&gu).map(|(r, g)| r * g).sum();
                // ∂u/∂x = I/d − x xᵀ/(d² n); zero rows keep only the first term.
                let radial = if norm > 0.0 { dot / (d * d * norm) } else { 0.0 };
                gx.extend(row.iter().zip(&gu).map(|(r, g)| T::cast(g / d - r * radial)));
            }
            vec![(features, gx)]
        }))
    }
}
