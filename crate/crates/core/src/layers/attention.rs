use alloc::format;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::{ConformerLayerConfig, Ctx, Init, LayerNorm, Linear, PosEncoding};
use crate::numerics::{ParamId, Real, Tensor, Var};
use crate::{Error, Result};

/// Sinusoidal table: row `r` encodes position `positions[r]` with
/// `sin` on even and `cos` on odd channels.
pub fn sinusoid_table<T: Real>(positions: impl Iterator<Item = f64>, dim: usize) -> Tensor<T> {
    let freqs: Vec<f64> = (0..dim.div_ceil(2))
        .map(|i| (-(2.0 * i as f64) * 10000.0f64.ln() / dim as f64).exp())
        .collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for pos in positions {
        rows += 1;
        for c in 0..dim {
            let angle = pos * freqs[c / 2];
            data.push(T::from_f64(if c % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(&[rows, dim], data).expect("at least one position")
}

/// Relative positions `T-1, T-2, ..., -(T-1)` encoded as a `[2T-1, dim]` table.
pub fn relative_positions<T: Real>(len: usize, dim: usize) -> Tensor<T> {
    let t = len as f64;
    sinusoid_table((0..2 * len - 1).map(|r| t - 1.0 - r as f64), dim)
}

#[derive(Debug, Clone)]
struct RelativeTerms {
    project: Linear,
    bias_content: ParamId,
    bias_position: ParamId,
}

/// Pre-norm multi-head self-attention with optional relative positional terms.
/// The caller adds the residual.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub norm: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    relative: Option<RelativeTerms>,
    heads: usize,
    dropout: f64,
}

impl SelfAttention {
    pub fn new(init: &mut Init<'_>, name: &str, cfg: &ConformerLayerConfig) -> Result<Self> {
        let d = cfg.attn_dim;
        let relative = match cfg.pos_enc {
            PosEncoding::Relative => Some(RelativeTerms {
                project: Linear::new(init, &format!("{name}.pos"), d, d, false)?,
                bias_content: init.constant(format!("{name}.pos_bias_u"), &[cfg.heads, cfg.head_dim()], 0.0)?,
                bias_position: init.constant(format!("{name}.pos_bias_v"), &[cfg.heads, cfg.head_dim()], 0.0)?,
            }),
            PosEncoding::Absolute => None,
        };
        Ok(Self {
            norm: LayerNorm::new(init, &format!("{name}.norm"), d)?,
            query: Linear::new(init, &format!("{name}.query"), d, d, true)?,
            key: Linear::new(init, &format!("{name}.key"), d, d, true)?,
            value: Linear::new(init, &format!("{name}.value"), d, d, true)?,
            output: Linear::new(init, &format!("{name}.output"), d, d, true)?,
            relative,
            heads: cfg.heads,
            dropout: cfg.dropout,
        })
    }

    pub fn param_count(cfg: &ConformerLayerConfig) -> usize {
        let d = cfg.attn_dim;
        let base = LayerNorm::param_count(d) + 4 * Linear::param_count(d, d, true);
        match cfg.pos_enc {
            PosEncoding::Relative => base + Linear::param_count(d, d, false) + 2 * d,
            PosEncoding::Absolute => base,
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>, valid: usize) -> Result<Var<T>> {
        Ok(self.forward_with_weights(ctx, x, valid)?.0)
    }

    /// Also returns the per-head attention matrices `[T, T]`.
    pub fn forward_with_weights<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: &Var<T>,
        valid: usize,
    ) -> Result<(Var<T>, Vec<Var<T>>)> {
        let d = self.query.input;
        if x.shape().len() != 2 || x.shape()[1] != d {
            return Err(Error::Shape {
                op: "mhsa",
                lhs: x.shape().into(),
                rhs: [d].into(),
            });
        }
        let t = x.rows();
        if valid == 0 || valid > t {
            return Err(Error::Shape {
                op: "mhsa mask",
                lhs: x.shape().into(),
                rhs: [valid].into(),
            });
        }
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();

        let h = self.norm.forward(ctx, x)?;
        let q = self.query.forward(ctx, &h)?;
        let k = self.key.forward(ctx, &h)?;
        let v = self.value.forward(ctx, &h)?;
        let rel = match &self.relative {
            Some(terms) => {
                let table = ctx.tape.constant(relative_positions(t, d));
                let p = terms.project.forward(ctx, &table)?;
                let u = ctx.param(terms.bias_content);
                let w = ctx.param(terms.bias_position);
                Some((p, u, w))
            }
            None => None,
        };

        let mut contexts = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let off = head * dk;
            let qh = ctx.tape.narrow_cols(&q, off, dk)?;
            let kh = ctx.tape.narrow_cols(&k, off, dk)?;
            let vh = ctx.tape.narrow_cols(&v, off, dk)?;
            let scores = match &rel {
                Some((p, u, w)) => {
                    let uh = ctx.tape.narrow_rows(u, head, 1)?;
                    let uh = ctx.tape.reshape(&uh, &[dk])?;
                    let wh = ctx.tape.narrow_rows(w, head, 1)?;
                    let wh = ctx.tape.reshape(&wh, &[dk])?;
                    let ph = ctx.tape.narrow_cols(p, off, dk)?;
                    let qu = ctx.tape.add_row(&qh, &uh)?;
                    let qw = ctx.tape.add_row(&qh, &wh)?;
                    let content = ctx.tape.matmul_nt(&qu, &kh)?;
                    let position = ctx.tape.matmul_nt(&qw, &ph)?;
                    let position = ctx.tape.rel_shift(&position)?;
                    ctx.tape.add(&content, &position)?
                }
                None => ctx.tape.matmul_nt(&qh, &kh)?,
            };
            let scores = ctx.tape.scale(&scores, scale);
            let attn = ctx.tape.masked_softmax(&scores, valid)?;
            contexts.push(ctx.tape.matmul(&attn, &vh)?);
            weights.push(attn);
        }
        let merged = ctx.tape.concat_cols(&contexts)?;
        let out = self.output.forward(ctx, &merged)?;
        Ok((ctx.dropout(&out, self.dropout)?, weights))
    }
}
