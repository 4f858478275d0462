//! Forward kernels over plain tensors. The tape wraps these and adds the
//! matching vector-Jacobian products; they are also usable directly for
//! tape-free evaluation.

use alloc::vec;
use alloc::vec::Vec;

use super::real::MatRef;
use super::{Real, Tensor};
use crate::{Error, Result};

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn rank_err(op: &'static str, t: &[usize], want: usize) -> Error {
    Error::InvalidShape {
        op,
        reason: alloc::format!("expected rank {want}, got shape {t:?}"),
    }
}

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(shape_err("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        MatRef::row_major(a.data(), k),
        MatRef::row_major(b.data(), n),
        T::zero(),
        &mut out,
    );
    Tensor::new(&[m, n], out)
}

/// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
pub fn matmul_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(shape_err("matmul_nt", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[0]);
    let mut out = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        MatRef::row_major(a.data(), k),
        MatRef::transposed(b.data(), k),
        T::zero(),
        &mut out,
    );
    Tensor::new(&[m, n], out)
}

/// Output length of a 1-D convolution: `floor((len + 2·padding − kernel)/stride) + 1`.
pub fn conv_out_len(op: &'static str, len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if len + 2 * padding < kernel {
        return Err(Error::EmptyOutput {
            op,
            len: len + 2 * padding,
            kernel,
        });
    }
    Ok((len + 2 * padding - kernel) / stride + 1)
}

fn check_conv_params(op: &'static str, kernel: usize, stride: usize) -> Result<()> {
    if kernel.is_multiple_of(2) {
        return Err(Error::InvalidShape {
            op,
            reason: alloc::format!("kernel size {kernel} must be odd"),
        });
    }
    if !(1..=2).contains(&stride) {
        return Err(Error::InvalidShape {
            op,
            reason: alloc::format!("stride {stride} must be 1 or 2"),
        });
    }
    Ok(())
}

/// Geometry of a 1-D convolution over `[T, Cin]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv1dGeom {
    pub len: usize,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_len: usize,
}

impl Conv1dGeom {
    pub fn new(x: &[usize], w: &[usize], bias: &[usize], stride: usize, padding: usize) -> Result<Self> {
        const OP: &str = "conv1d";
        if x.len() != 2 {
            return Err(rank_err(OP, x, 2));
        }
        if w.len() != 3 {
            return Err(rank_err(OP, w, 3));
        }
        if w[1] != x[1] {
            return Err(shape_err(OP, x, w));
        }
        if bias != [w[2]] {
            return Err(shape_err(OP, w, bias));
        }
        check_conv_params(OP, w[0], stride)?;
        let out_len = conv_out_len(OP, x[0], w[0], stride, padding)?;
        Ok(Self {
            len: x[0],
            cin: x[1],
            cout: w[2],
            kernel: w[0],
            stride,
            padding,
            out_len,
        })
    }

    fn patch(&self) -> usize {
        self.kernel * self.cin
    }

    /// Source frame for output `t`, tap `j`, if inside the unpadded input.
    #[inline]
    fn src(&self, t: usize, j: usize) -> Option<usize> {
        let pos = (t * self.stride + j) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < self.len).then_some(pos as usize)
    }

    pub fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let patch = self.patch();
        let mut cols = vec![T::zero(); self.out_len * patch];
        for t in 0..self.out_len {
            for j in 0..self.kernel {
                if let Some(s) = self.src(t, j) {
                    let dst = t * patch + j * self.cin;
                    cols[dst..dst + self.cin].copy_from_slice(&x[s * self.cin..(s + 1) * self.cin]);
                }
            }
        }
        cols
    }

    pub fn col2im<T: Real>(&self, cols: &[T]) -> Vec<T> {
        let patch = self.patch();
        let mut x = vec![T::zero(); self.len * self.cin];
        for t in 0..self.out_len {
            for j in 0..self.kernel {
                if let Some(s) = self.src(t, j) {
                    let src = &cols[t * patch + j * self.cin..t * patch + (j + 1) * self.cin];
                    for (d, &v) in x[s * self.cin..(s + 1) * self.cin].iter_mut().zip(src) {
                        *d = *d + v;
                    }
                }
            }
        }
        x
    }
}

fn add_bias_rows<T: Real>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o = *o + b;
        }
    }
}

/// Cross-correlation of `x: [T, Cin]` with `kernel: [k, Cin, Cout]` plus a
/// per-output-channel bias.
pub fn conv1d<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = Conv1dGeom::new(x.shape(), kernel.shape(), bias.shape(), stride, padding)?;
    let cols = g.im2col(x.data());
    let mut out = vec![T::zero(); g.out_len * g.cout];
    T::gemm(
        g.out_len,
        g.patch(),
        g.cout,
        MatRef::row_major(&cols, g.patch()),
        MatRef::row_major(kernel.data(), g.cout),
        T::zero(),
        &mut out,
    );
    add_bias_rows(&mut out, bias.data());
    Tensor::new(&[g.out_len, g.cout], out)
}

/// Geometry of a 2-D convolution over `[T, F, Cin]` with a square kernel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv2dGeom {
    pub len: usize,
    pub freq: usize,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_len: usize,
    pub out_freq: usize,
}

impl Conv2dGeom {
    pub fn new(x: &[usize], w: &[usize], bias: &[usize], stride: usize, padding: usize) -> Result<Self> {
        const OP: &str = "conv2d";
        if x.len() != 3 {
            return Err(rank_err(OP, x, 3));
        }
        if w.len() != 4 || w[0] != w[1] {
            return Err(rank_err(OP, w, 4));
        }
        if w[2] != x[2] {
            return Err(shape_err(OP, x, w));
        }
        if bias != [w[3]] {
            return Err(shape_err(OP, w, bias));
        }
        check_conv_params(OP, w[0], stride)?;
        Ok(Self {
            len: x[0],
            freq: x[1],
            cin: x[2],
            cout: w[3],
            kernel: w[0],
            stride,
            padding,
            out_len: conv_out_len(OP, x[0], w[0], stride, padding)?,
            out_freq: conv_out_len(OP, x[1], w[0], stride, padding)?,
        })
    }

    fn patch(&self) -> usize {
        self.kernel * self.kernel * self.cin
    }

    #[inline]
    fn src(&self, o: usize, j: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + j) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let patch = self.patch();
        for t in 0..self.out_len {
            for u in 0..self.out_freq {
                let row = (t * self.out_freq + u) * patch;
                for i in 0..self.kernel {
                    let Some(st) = self.src(t, i, self.len) else { continue };
                    for j in 0..self.kernel {
                        let Some(sf) = self.src(u, j, self.freq) else { continue };
                        f(row + (i * self.kernel + j) * self.cin, (st * self.freq + sf) * self.cin);
                    }
                }
            }
        }
    }

    pub fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let mut cols = vec![T::zero(); self.out_len * self.out_freq * self.patch()];
        let cin = self.cin;
        self.for_each_tap(|dst, src| cols[dst..dst + cin].copy_from_slice(&x[src..src + cin]));
        cols
    }

    pub fn col2im<T: Real>(&self, cols: &[T]) -> Vec<T> {
        let mut x = vec![T::zero(); self.len * self.freq * self.cin];
        let cin = self.cin;
        self.for_each_tap(|c, s| {
            for (d, &v) in x[s..s + cin].iter_mut().zip(&cols[c..c + cin]) {
                *d = *d + v;
            }
        });
        x
    }
}

/// 2-D cross-correlation over time × frequency: `x: [T, F, Cin]`,
/// `kernel: [k, k, Cin, Cout]`, output `[T', F', Cout]`.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = Conv2dGeom::new(x.shape(), kernel.shape(), bias.shape(), stride, padding)?;
    let cols = g.im2col(x.data());
    let rows = g.out_len * g.out_freq;
    let mut out = vec![T::zero(); rows * g.cout];
    T::gemm(
        rows,
        g.patch(),
        g.cout,
        MatRef::row_major(&cols, g.patch()),
        MatRef::row_major(kernel.data(), g.cout),
        T::zero(),
        &mut out,
    );
    add_bias_rows(&mut out, bias.data());
    Tensor::new(&[g.out_len, g.out_freq, g.cout], out)
}

/// Per-channel convolution, stride 1, `x: [T, C]`, `kernel: [k, C]`,
/// padding `(k-1)/2` so the output keeps length `T`.
pub fn depthwise_conv1d<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "depthwise_conv1d";
    if x.rank() != 2 || kernel.rank() != 2 || kernel.shape()[1] != x.shape()[1] || bias.shape() != [x.shape()[1]] {
        return Err(shape_err(OP, x.shape(), kernel.shape()));
    }
    check_conv_params(OP, kernel.shape()[0], 1)?;
    let (len, c) = (x.shape()[0], x.shape()[1]);
    let k = kernel.shape()[0];
    let pad = (k - 1) / 2;
    let (xd, wd) = (x.data(), kernel.data());
    let mut out = Vec::with_capacity(len * c);
    for _ in 0..len {
        out.extend_from_slice(bias.data());
    }
    for t in 0..len {
        for j in 0..k {
            let s = t as isize + j as isize - pad as isize;
            if s < 0 || s as usize >= len {
                continue;
            }
            let s = s as usize;
            let (o, xi, wi) = (
                &mut out[t * c..(t + 1) * c],
                &xd[s * c..(s + 1) * c],
                &wd[j * c..(j + 1) * c],
            );
            for ((o, &xv), &wv) in o.iter_mut().zip(xi).zip(wi) {
                *o = *o + xv * wv;
            }
        }
    }
    Tensor::new(&[len, c], out)
}

/// Normalized activations and reciprocal standard deviations kept for the
/// backward pass.
pub(crate) struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm_cached<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = x.last_dim();
    if gain.shape() != [d] || bias.shape() != [d] {
        return Err(shape_err("layer_norm", x.shape(), gain.shape()));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(alloc::format!(
            "layer_norm eps must be positive, got {eps}"
        )));
    }
    let eps = T::from_f64(eps);
    let inv_d = T::one() / T::from_f64(d as f64);
    let rows = x.numel() / d;
    let mut out = vec![T::zero(); x.numel()];
    let mut xhat = vec![T::zero(); x.numel()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let h = (row[i] - mean) * rs;
            xhat[r * d + i] = h;
            out[r * d + i] = h * gain.data()[i] + bias.data()[i];
        }
    }
    Ok((Tensor::new(x.shape(), out)?, LayerNormCache { xhat, rstd }))
}

/// Normalizes over the last axis to zero mean and unit variance, then applies
/// the affine `gain`/`bias`.
pub fn layer_norm<T: Real>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    layer_norm_cached(x, gain, bias, eps).map(|(y, _)| y)
}

/// Softmax over the last axis, restricted to the first `valid` columns; the
/// remaining columns get exactly zero weight.
pub fn masked_softmax<T: Real>(x: &Tensor<T>, valid: usize) -> Result<Tensor<T>> {
    let d = x.last_dim();
    if valid == 0 || valid > d {
        return Err(Error::InvalidShape {
            op: "masked_softmax",
            reason: alloc::format!("valid width {valid} outside 1..={d}"),
        });
    }
    let mut out = vec![T::zero(); x.numel()];
    for (src, dst) in x.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let max = src[..valid].iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (o, &v) in dst[..valid].iter_mut().zip(&src[..valid]) {
            *o = (v - max).exp();
            sum = sum + *o;
        }
        let inv = T::one() / sum;
        for o in &mut dst[..valid] {
            *o = *o * inv;
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn softmax_lastaxis<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    masked_softmax(x, x.last_dim())
}

/// Row-wise log-softmax over the last axis.
pub fn log_softmax<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let d = x.last_dim();
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(d) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for v in row {
            *v = *v - lse;
        }
    }
    Tensor::new(x.shape(), out).expect("same shape")
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn swish<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v * sigmoid(v))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gated linear unit over the last axis: first half · sigmoid(second half).
pub fn glu_lastaxis<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let d2 = x.last_dim();
    if !d2.is_multiple_of(2) {
        return Err(Error::InvalidShape {
            op: "glu",
            reason: alloc::format!("last extent {d2} is odd"),
        });
    }
    let d = d2 / 2;
    let mut out = Vec::with_capacity(x.numel() / 2);
    for row in x.data().chunks_exact(d2) {
        let (a, b) = row.split_at(d);
        out.extend(a.iter().zip(b).map(|(&a, &b)| a * sigmoid(b)));
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d;
    Tensor::new(&shape, out)
}

/// Nearest-neighbour doubling along the leading axis: output row `i` is input
/// row `i / 2`.
pub fn upsample_rows_x2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let w = x.row_len();
    let mut out = Vec::with_capacity(x.numel() * 2);
    for r in x.data().chunks_exact(w) {
        out.extend_from_slice(r);
        out.extend_from_slice(r);
    }
    let mut shape = x.shape().to_vec();
    shape[0] *= 2;
    Tensor::new(&shape, out).expect("doubled rows")
}

/// Keeps rows `0, 2, 4, ...`; output length `ceil(T/2)`.
pub fn decimate_rows_x2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let w = x.row_len();
    let mut out = Vec::with_capacity(x.numel() / 2 + w);
    for r in x.data().chunks_exact(w).step_by(2) {
        out.extend_from_slice(r);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = x.rows().div_ceil(2);
    Tensor::new(&shape, out).expect("decimated rows")
}

/// Zeroes every leading-axis slice at index `>= valid`.
pub fn mask_rows<T: Real>(x: &Tensor<T>, valid: usize) -> Tensor<T> {
    let mut out = x.clone();
    let w = x.row_len();
    let start = (valid * w).min(out.numel());
    out.data_mut()[start..].fill(T::zero());
    out
}

/// Relative-position shift: `x: [T, 2T-1]` scored against relative positions
/// `T-1, ..., -(T-1)`; output `[T, T]` with `out[i][j] = x[i][T-1-i+j]`.
pub fn rel_shift<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 2 || x.shape()[1] != 2 * x.shape()[0] - 1 {
        return Err(Error::InvalidShape {
            op: "rel_shift",
            reason: alloc::format!("expected [T, 2T-1], got {:?}", x.shape()),
        });
    }
    let t = x.shape()[0];
    let w = 2 * t - 1;
    let mut out = Vec::with_capacity(t * t);
    for i in 0..t {
        let start = i * w + (t - 1 - i);
        out.extend_from_slice(&x.data()[start..start + t]);
    }
    Tensor::new(&[t, t], out)
}
