use alloc::format;

use super::halve;
use crate::features::FEATURE_DIM;
use crate::layers::{Ctx, Init, Linear};
use crate::numerics::{ParamId, Real, Tape, Var};
use crate::{Error, Result};

/// Two stride-2 3×3 conv2d layers with ReLU over time × frequency, then a
/// linear projection of the flattened frequency × channel axis to the model
/// dimension. Time and frequency both shrink 4×.
#[derive(Debug, Clone)]
pub struct FrontendX4 {
    conv1: (ParamId, ParamId),
    conv2: (ParamId, ParamId),
    pub project: Linear,
    channels: usize,
}

impl FrontendX4 {
    pub const KERNEL: usize = 3;

    pub fn new(init: &mut Init<'_>, name: &str, channels: usize, attn_dim: usize) -> Result<Self> {
        let k = Self::KERNEL;
        let conv1 = (
            init.uniform(format!("{name}.conv1.weight"), &[k, k, 1, channels], k * k)?,
            init.constant(format!("{name}.conv1.bias"), &[channels], 0.0)?,
        );
        let conv2 = (
            init.uniform(
                format!("{name}.conv2.weight"),
                &[k, k, channels, channels],
                k * k * channels,
            )?,
            init.constant(format!("{name}.conv2.bias"), &[channels], 0.0)?,
        );
        let flat = Self::out_freq() * channels;
        Ok(Self {
            conv1,
            conv2,
            project: Linear::new(init, &format!("{name}.project"), flat, attn_dim, true)?,
            channels,
        })
    }

    /// Frequency bins left after two halvings of the 80 mel bins.
    pub fn out_freq() -> usize {
        halve(halve(FEATURE_DIM))
    }

    pub fn param_count(channels: usize, attn_dim: usize) -> usize {
        let k2 = Self::KERNEL * Self::KERNEL;
        (k2 * channels + channels)
            + (k2 * channels * channels + channels)
            + Linear::param_count(Self::out_freq() * channels, attn_dim, true)
    }

    /// `feats: [T, 80]` with `valid` real frames → `[ceil(ceil(T/2)/2), d]`.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, feats: &Var<T>, valid: usize) -> Result<Var<T>> {
        if feats.shape().len() != 2 || feats.shape()[1] != FEATURE_DIM {
            return Err(Error::Shape {
                op: "frontend_x4",
                lhs: feats.shape().into(),
                rhs: [FEATURE_DIM].into(),
            });
        }
        let len = feats.rows();
        let x = ctx.tape.mask_rows(feats, valid);
        let x = ctx.tape.reshape(&x, &[len, FEATURE_DIM, 1])?;
        let (w, b) = (ctx.param(self.conv1.0), ctx.param(self.conv1.1));
        let x = ctx.tape.conv2d(&x, &w, &b, 2, 1)?;
        let x = ctx.tape.relu(&x);
        let valid = halve(valid);
        let x = ctx.tape.mask_rows(&x, valid);
        let (w, b) = (ctx.param(self.conv2.0), ctx.param(self.conv2.1));
        let x = ctx.tape.conv2d(&x, &w, &b, 2, 1)?;
        let x = ctx.tape.relu(&x);
        let x = ctx.tape.mask_rows(&x, halve(valid));
        let rows = x.rows();
        let x = ctx.tape.reshape(&x, &[rows, Self::out_freq() * self.channels])?;
        self.project.forward(ctx, &x)
    }
}

/// Downsampling x2: conv1d k3/s1 to the inner width, ReLU, conv1d k3/s2,
/// ReLU, conv1d k1 back to the model dimension. Output length `ceil(T/2)`.
#[derive(Debug, Clone)]
pub struct DownsampleX2 {
    convs: [(ParamId, ParamId); 3],
}

impl DownsampleX2 {
    pub fn new(init: &mut Init<'_>, name: &str, attn_dim: usize, inner: usize) -> Result<Self> {
        let mut conv = |i: usize, k: usize, cin: usize, cout: usize| -> Result<(ParamId, ParamId)> {
            Ok((
                init.uniform(format!("{name}.conv{i}.weight"), &[k, cin, cout], k * cin)?,
                init.constant(format!("{name}.conv{i}.bias"), &[cout], 0.0)?,
            ))
        };
        Ok(Self {
            convs: [
                conv(1, 3, attn_dim, inner)?,
                conv(2, 3, inner, inner)?,
                conv(3, 1, inner, attn_dim)?,
            ],
        })
    }

    pub fn param_count(attn_dim: usize, inner: usize) -> usize {
        (3 * attn_dim * inner + inner) + (3 * inner * inner + inner) + (inner * attn_dim + attn_dim)
    }

    /// `x: [T, d]` with `valid` real frames → `[ceil(T/2), d]` with
    /// `ceil(valid/2)` real frames.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>, valid: usize) -> Result<Var<T>> {
        let [c1, c2, c3] = &self.convs;
        let x = ctx.tape.mask_rows(x, valid);
        let (w, b) = (ctx.param(c1.0), ctx.param(c1.1));
        let h = ctx.tape.conv1d(&x, &w, &b, 1, 1)?;
        let h = ctx.tape.relu(&h);
        let h = ctx.tape.mask_rows(&h, valid);
        let (w, b) = (ctx.param(c2.0), ctx.param(c2.1));
        let h = ctx.tape.conv1d(&h, &w, &b, 2, 1)?;
        let h = ctx.tape.relu(&h);
        let (w, b) = (ctx.param(c3.0), ctx.param(c3.1));
        ctx.tape.conv1d(&h, &w, &b, 1, 0)
    }
}

/// Nearest-neighbour x2 upsampling along time: frame `i` copies frame `i/2`.
pub fn upsample_x2<T: Real>(tape: &mut Tape<T>, x: &Var<T>) -> Var<T> {
    tape.upsample_rows_x2(x)
}

/// Truncates `upsampled` to the skip branch's length and adds the two.
/// Doubling may overshoot an odd skip length by exactly one frame.
pub fn skip_combine<T: Real>(tape: &mut Tape<T>, upsampled: &Var<T>, skip: &Var<T>) -> Result<Var<T>> {
    let (tu, ts) = (upsampled.rows(), skip.rows());
    if tu < ts || tu > ts + 1 {
        return Err(Error::Alignment {
            upsampled: tu,
            skip: ts,
        });
    }
    let trimmed = tape.narrow_rows(upsampled, 0, ts)?;
    tape.add(&trimmed, skip)
}
