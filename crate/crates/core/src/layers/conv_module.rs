use alloc::format;

use super::{ConformerLayerConfig, Ctx, Init, LayerNorm, Linear};
use crate::numerics::{ParamId, Real, Var};
use crate::{Error, Result};

/// Conformer convolution module:
/// norm → pointwise d→2d → GLU → depthwise (same padding) → norm → swish →
/// pointwise d→d → dropout. Padded frames are zeroed before the depthwise
/// convolution. Layer norm stands in for batch norm.
#[derive(Debug, Clone)]
pub struct ConvModule {
    pub norm: LayerNorm,
    pub pointwise_in: Linear,
    pub depthwise_weight: ParamId,
    pub depthwise_bias: ParamId,
    pub depthwise_norm: LayerNorm,
    pub pointwise_out: Linear,
    dropout: f64,
}

impl ConvModule {
    pub fn new(init: &mut Init<'_>, name: &str, cfg: &ConformerLayerConfig) -> Result<Self> {
        let d = cfg.attn_dim;
        Ok(Self {
            norm: LayerNorm::new(init, &format!("{name}.norm"), d)?,
            pointwise_in: Linear::new(init, &format!("{name}.pointwise_in"), d, 2 * d, true)?,
            depthwise_weight: init.uniform(
                format!("{name}.depthwise.weight"),
                &[cfg.conv_kernel, d],
                cfg.conv_kernel,
            )?,
            depthwise_bias: init.constant(format!("{name}.depthwise.bias"), &[d], 0.0)?,
            depthwise_norm: LayerNorm::new(init, &format!("{name}.depthwise_norm"), d)?,
            pointwise_out: Linear::new(init, &format!("{name}.pointwise_out"), d, d, true)?,
            dropout: cfg.dropout,
        })
    }

    pub fn param_count(cfg: &ConformerLayerConfig) -> usize {
        let d = cfg.attn_dim;
        LayerNorm::param_count(d)
            + Linear::param_count(d, 2 * d, true)
            + (cfg.conv_kernel * d + d)
            + LayerNorm::param_count(d)
            + Linear::param_count(d, d, true)
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>, valid: usize) -> Result<Var<T>> {
        let d = self.pointwise_out.output;
        if x.shape().len() != 2 || x.shape()[1] != d {
            return Err(Error::Shape {
                op: "conv_module",
                lhs: x.shape().into(),
                rhs: [d].into(),
            });
        }
        let h = self.norm.forward(ctx, x)?;
        let h = self.pointwise_in.forward(ctx, &h)?;
        let h = ctx.tape.glu(&h)?;
        let h = ctx.tape.mask_rows(&h, valid);
        let w = ctx.param(self.depthwise_weight);
        let b = ctx.param(self.depthwise_bias);
        let h = ctx.tape.depthwise_conv1d(&h, &w, &b)?;
        let h = self.depthwise_norm.forward(ctx, &h)?;
        let h = ctx.tape.swish(&h);
        let h = self.pointwise_out.forward(ctx, &h)?;
        ctx.dropout(&h, self.dropout)
    }
}
