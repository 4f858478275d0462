use alloc::format;

use super::{ConformerLayerConfig, Ctx, Init, LayerNorm, Linear};
use crate::numerics::{Real, Var};
use crate::{Error, Result};

/// Macaron half-step feed-forward: norm → linear → swish → dropout → linear.
/// The caller adds the 0.5-scaled residual.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub norm: LayerNorm,
    pub expand: Linear,
    pub project: Linear,
    dropout: f64,
}

impl FeedForward {
    pub fn new(init: &mut Init<'_>, name: &str, cfg: &ConformerLayerConfig) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(init, &format!("{name}.norm"), cfg.attn_dim)?,
            expand: Linear::new(init, &format!("{name}.expand"), cfg.attn_dim, cfg.ffn_dim, true)?,
            project: Linear::new(init, &format!("{name}.project"), cfg.ffn_dim, cfg.attn_dim, true)?,
            dropout: cfg.dropout,
        })
    }

    pub fn param_count(cfg: &ConformerLayerConfig) -> usize {
        LayerNorm::param_count(cfg.attn_dim)
            + Linear::param_count(cfg.attn_dim, cfg.ffn_dim, true)
            + Linear::param_count(cfg.ffn_dim, cfg.attn_dim, true)
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        if x.shape().len() != 2 || x.shape()[1] != self.expand.input {
            return Err(Error::Shape {
                op: "ffn",
                lhs: x.shape().into(),
                rhs: [self.expand.input].into(),
            });
        }
        let h = self.norm.forward(ctx, x)?;
        let h = self.expand.forward(ctx, &h)?;
        let h = ctx.tape.swish(&h);
        let h = ctx.dropout(&h, self.dropout)?;
        self.project.forward(ctx, &h)
    }
}
