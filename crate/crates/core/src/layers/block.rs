use alloc::format;

use super::{ConformerLayerConfig, ConvModule, Ctx, FeedForward, Init, LayerNorm, SelfAttention};
use crate::numerics::{Real, Var};
use crate::Result;

/// `x + ½·ffn`, `+ mhsa`, `+ conv`, `+ ½·ffn`, then a final layer norm.
#[derive(Debug, Clone)]
pub struct ConformerBlock {
    pub ffn_in: FeedForward,
    pub attention: SelfAttention,
    pub conv: ConvModule,
    pub ffn_out: FeedForward,
    pub norm: LayerNorm,
}

impl ConformerBlock {
    pub fn new(init: &mut Init<'_>, name: &str, cfg: &ConformerLayerConfig) -> Result<Self> {
        Ok(Self {
            ffn_in: FeedForward::new(init, &format!("{name}.ffn_in"), cfg)?,
            attention: SelfAttention::new(init, &format!("{name}.attention"), cfg)?,
            conv: ConvModule::new(init, &format!("{name}.conv"), cfg)?,
            ffn_out: FeedForward::new(init, &format!("{name}.ffn_out"), cfg)?,
            norm: LayerNorm::new(init, &format!("{name}.norm"), cfg.attn_dim)?,
        })
    }

    pub fn param_count(cfg: &ConformerLayerConfig) -> usize {
        2 * FeedForward::param_count(cfg)
            + SelfAttention::param_count(cfg)
            + ConvModule::param_count(cfg)
            + LayerNorm::param_count(cfg.attn_dim)
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>, valid: usize) -> Result<Var<T>> {
        let f = self.ffn_in.forward(ctx, x)?;
        let f = ctx.tape.scale(&f, 0.5);
        let x = ctx.tape.add(x, &f)?;
        let a = self.attention.forward(ctx, &x, valid)?;
        let x = ctx.tape.add(&x, &a)?;
        let c = self.conv.forward(ctx, &x, valid)?;
        let x = ctx.tape.add(&x, &c)?;
        let f = self.ffn_out.forward(ctx, &x)?;
        let f = ctx.tape.scale(&f, 0.5);
        let x = ctx.tape.add(&x, &f)?;
        self.norm.forward(ctx, &x)
    }
}
