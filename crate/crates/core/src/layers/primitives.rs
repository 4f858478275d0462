use alloc::format;

use super::{Ctx, Init};
use crate::numerics::{ParamId, Real, Var};
use crate::Result;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `x · W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, name: &str, input: usize, output: usize, bias: bool) -> Result<Self> {
        let weight = init.uniform(format!("{name}.weight"), &[input, output], input)?;
        let bias = if bias {
            Some(init.constant(format!("{name}.bias"), &[output], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn param_count(input: usize, output: usize, bias: bool) -> usize {
        input * output + if bias { output } else { 0 }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.tape.linear(x, &w, b.as_ref())
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: init.constant(format!("{name}.gain"), &[dim], 1.0)?,
            bias: init.constant(format!("{name}.bias"), &[dim], 0.0)?,
        })
    }

    pub fn param_count(dim: usize) -> usize {
        2 * dim
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let g = ctx.param(self.gain);
        let b = ctx.param(self.bias);
        ctx.tape.layer_norm(x, &g, &b, LAYER_NORM_EPS)
    }
}
