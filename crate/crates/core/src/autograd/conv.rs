//! 2-D convolution and transposed convolution via im2col + GEMM.
//!
//! Both operations share one geometry: an "image" side `[C, H, W]` and a
//! "column" side of `out_h × out_w` kernel placements. Convolution gathers
//! image → columns, the transposed convolution scatters columns → image, so
//! each one's forward pass is the other's input-gradient pass.

use alloc::vec;
use alloc::vec::Vec;

use super::tape::{BackwardCtx, Tape, Var};
use crate::real::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output positions `lo..hi` whose tap `k` lands inside `0..extent`.
    #[inline]
    fn valid(&self, k: usize, extent: usize, outputs: usize) -> (usize, usize) {
        // o·s + k − p ∈ [0, extent)  ⇔  o ∈ [⌈(p − k)/s⌉, ⌈(extent + p − k)/s⌉)
        let lo = self.padding.saturating_sub(k).div_ceil(self.stride);
        let hi = (extent + self.padding).saturating_sub(k).div_ceil(self.stride);
        (lo.min(outputs), hi.min(outputs).max(lo.min(outputs)))
    }
}

fn im2col<T: Real>(image: &[T], g: &Geometry, col: &mut [T]) {
    let l = g.cols();
    let (s, p) = (g.stride, g.padding);
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            let (ylo, yhi) = g.valid(i, g.height, g.out_h);
            for j in 0..g.kw {
                let (xlo, xhi) = g.valid(j, g.width, g.out_w);
                let row = &mut col[((c * g.kh + i) * g.kw + j) * l..][..l];
                row[..ylo * g.out_w].fill(T::zero());
                row[yhi * g.out_w..].fill(T::zero());
                for oy in ylo..yhi {
                    let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                    dst[..xlo].fill(T::zero());
                    dst[xhi..].fill(T::zero());
                    if xlo == xhi {
                        continue;
                    }
                    let src = &plane[(oy * s + i - p) * g.width..][..g.width];
                    let x0 = xlo * s + j - p;
                    if s == 1 {
                        dst[xlo..xhi].copy_from_slice(&src[x0..x0 + (xhi - xlo)]);
                    } else {
                        for (d, v) in dst[xlo..xhi].iter_mut().zip(src[x0..].iter().step_by(s)) {
                            *d = *v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]; accumulates into `image`.
fn col2im<T: Real>(col: &[T], g: &Geometry, image: &mut [T]) {
    let l = g.cols();
    let (s, p) = (g.stride, g.padding);
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            let (ylo, yhi) = g.valid(i, g.height, g.out_h);
            for j in 0..g.kw {
                let (xlo, xhi) = g.valid(j, g.width, g.out_w);
                if xlo == xhi {
                    continue;
                }
                let row = &col[((c * g.kh + i) * g.kw + j) * l..][..l];
                let x0 = xlo * s + j - p;
                for oy in ylo..yhi {
                    let src = &row[oy * g.out_w + xlo..oy * g.out_w + xhi];
                    let dst = &mut plane[(oy * s + i - p) * g.width..][..g.width];
                    if s == 1 {
                        for (d, v) in dst[x0..x0 + src.len()].iter_mut().zip(src) {
                            *d = *d + *v;
                        }
                    } else {
                        for (d, v) in dst[x0..].iter_mut().step_by(s).zip(src) {
                            *d = *d + *v;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v = *v + *b);
    }
}

fn bias_grad<T: Real>(g: &[T], channels: usize, plane: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); channels];
    for (i, chunk) in g.chunks(plane).enumerate() {
        let c = i % channels;
        gb[c] = gb[c] + chunk.iter().fold(T::zero(), |a, v| a + *v);
    }
    gb
}

fn dims4(op: &'static str, shape: &[usize], what: &str) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(shape)
        .map_err(|_| Error::invalid(op, alloc::format!("{what} must be rank 4, got {shape:?}")))
}

impl<T: Real> Tape<T> {
    /// `input [B, Cin, H, W]`, `weight [Cout, Cin, kh, kw]`, `bias [Cout]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let [batch, cin, h, w] = dims4(OP, self.shape(input), "input")?;
        let [cout, wcin, kh, kw] = dims4(OP, self.shape(weight), "weight")?;
        if wcin != cin {
            return Err(Error::invalid(
                OP,
                alloc::format!("channel mismatch: input has {cin}, weight expects {wcin}"),
            ));
        }
        if self.shape(bias) != [cout] {
            return Err(Error::shape(OP, &[cout], self.shape(bias)));
        }
        if stride == 0 {
            return Err(Error::invalid(OP, "stride must be at least 1"));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::invalid(OP, "kernel larger than padded input"));
        }
        let g = Geometry {
            channels: cin,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        let (k, l) = (g.rows(), g.cols());
        let mut out = vec![T::zero(); batch * cout * l];
        let mut col = vec![T::zero(); k * l];
        {
            let x = self.data(input);
            let wt = self.data(weight);
            for b in 0..batch {
                im2col(&x[b * g.image_len()..][..g.image_len()], &g, &mut col);
                let dst = &mut out[b * cout * l..][..cout * l];
                T::gemm(cout, k, l, T::one(), wt, (k, 1), &col, (l, 1), T::zero(), dst, (l, 1));
            }
            add_bias(&mut out, self.data(bias), l);
        }
        let shape = vec![batch, cout, g.out_h, g.out_w];
        Ok(self.push(shape, out, &[input, weight, bias], move |ctx: &BackwardCtx<'_, T>, grad: &[T]| {
            let x = ctx.data(input);
            let wt = ctx.data(weight);
            let (need_x, need_w) = (ctx.needs_grad(input), ctx.needs_grad(weight));
            let mut gx = if need_x { vec![T::zero(); x.len()] } else { Vec::new() };
            let mut gw = if need_w { vec![T::zero(); wt.len()] } else { Vec::new() };
            let mut col = vec![T::zero(); k * l];
            for b in 0..batch {
                let gb = &grad[b * cout * l..][..cout * l];
                if need_w {
                    im2col(&x[b * g.image_len()..][..g.image_len()], &g, &mut col);
                    T::gemm(cout, l, k, T::one(), gb, (l, 1), &col, (1, l), T::one(), &mut gw, (k, 1));
                }
                if need_x {
                    T::gemm(k, cout, l, T::one(), wt, (1, k), gb, (l, 1), T::zero(), &mut col, (l, 1));
                    col2im(&col, &g, &mut gx[b * g.image_len()..][..g.image_len()]);
                }
            }
            let mut out = Vec::with_capacity(3);
            if need_x {
                out.push((input, gx));
            }
            if need_w {
                out.push((weight, gw));
            }
            if ctx.needs_grad(bias) {
                out.push((bias, bias_grad(grad, cout, l)));
            }
            out
        }))
    }

    /// `input [B, Cin, H, W]`, `weight [Cin, Cout, kh, kw]`, `bias [Cout]`;
    /// output spatial size `(H − 1)·stride − 2·padding + kh`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let [batch, cin, h, w] = dims4(OP, self.shape(input), "input")?;
        let [wcin, cout, kh, kw] = dims4(OP, self.shape(weight), "weight")?;
        if wcin != cin {
            return Err(Error::invalid(
                OP,
                alloc::format!("channel mismatch: input has {cin}, weight expects {wcin}"),
            ));
        }
        if self.shape(bias) != [cout] {
            return Err(Error::shape(OP, &[cout], self.shape(bias)));
        }
        if stride == 0 {
            return Err(Error::invalid(OP, "stride must be at least 1"));
        }
        let (ho, wo) = ((h - 1) * stride + kh, (w - 1) * stride + kw);
        if ho <= 2 * padding || wo <= 2 * padding {
            return Err(Error::invalid(OP, "padding leaves an empty output"));
        }
        let g = Geometry {
            channels: cout,
            height: ho - 2 * padding,
            width: wo - 2 * padding,
            kh,
            kw,
            stride,
            padding,
            out_h: h,
            out_w: w,
        };
        let (k, l) = (g.rows(), g.cols());
        let mut out = vec![T::zero(); batch * g.image_len()];
        let mut col = vec![T::zero(); k * l];
        {
            let x = self.data(input);
            let wt = self.data(weight);
            for b in 0..batch {
                let xb = &x[b * cin * l..][..cin * l];
                T::gemm(k, cin, l, T::one(), wt, (1, k), xb, (l, 1), T::zero(), &mut col, (l, 1));
                col2im(&col, &g, &mut out[b * g.image_len()..][..g.image_len()]);
            }
            add_bias(&mut out, self.data(bias), g.height * g.width);
        }
        let shape = vec![batch, cout, g.height, g.width];
        Ok(self.push(shape, out, &[input, weight, bias], move |ctx: &BackwardCtx<'_, T>, grad: &[T]| {
            let x = ctx.data(input);
            let wt = ctx.data(weight);
            let (need_x, need_w) = (ctx.needs_grad(input), ctx.needs_grad(weight));
            let mut gx = if need_x { vec![T::zero(); x.len()] } else { Vec::new() };
            let mut gw = if need_w { vec![T::zero(); wt.len()] } else { Vec::new() };
            let mut col = vec![T::zero(); k * l];
            if need_x || need_w {
                for b in 0..batch {
                    im2col(&grad[b * g.image_len()..][..g.image_len()], &g, &mut col);
                    if need_x {
                        let dst = &mut gx[b * cin * l..][..cin * l];
                        T::gemm(cin, k, l, T::one(), wt, (k, 1), &col, (l, 1), T::zero(), dst, (l, 1));
                    }
                    if need_w {
                        let xb = &x[b * cin * l..][..cin * l];
                        T::gemm(cin, l, k, T::one(), xb, (l, 1), &col, (1, l), T::one(), &mut gw, (k, 1));
                    }
                }
            }
            let mut out = Vec::with_capacity(3);
            if need_x {
                out.push((input, gx));
            }
            if need_w {
                out.push((weight, gw));
            }
            if ctx.needs_grad(bias) {
                out.push((bias, bias_grad(grad, cout, g.height * g.width)));
            }
            out
        }))
    }
}
