//! Conformer block and its sublayers.
//!
//! Every layer works on one utterance `[T, d]` whose first `valid` frames
//! are real and the rest padding. Padding never leaks into valid frames:
//! attention gives padded keys zero weight and convolutions see zeros in
//! padded positions.

mod attention;
mod block;
mod conv_module;
mod ffn;
mod primitives;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::{ParamId, ParamSet, Real, Tape, Tensor, Var};
use crate::{Error, Result};

pub use attention::{relative_positions, sinusoid_table, SelfAttention};
pub use block::ConformerBlock;
pub use conv_module::ConvModule;
pub use ffn::FeedForward;
pub use primitives::{LayerNorm, Linear, LAYER_NORM_EPS};

/// Positional information used by self-attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosEncoding {
    /// Transformer-XL style content and position terms inside attention.
    Relative,
    /// Sinusoids added to the frontend output; attention is content-only.
    Absolute,
}

/// Dimensions of one Conformer layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConformerLayerConfig {
    pub attn_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub conv_kernel: usize,
    pub dropout: f64,
    pub pos_enc: PosEncoding,
}

impl ConformerLayerConfig {
    /// Conformer-S sizes: 280-dim attention with 8 heads, 1024 FFN, kernel 5.
    pub fn small() -> Self {
        Self {
            attn_dim: 280,
            heads: 8,
            ffn_dim: 1024,
            conv_kernel: 5,
            dropout: 0.1,
            pos_enc: PosEncoding::Relative,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attn_dim == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        if !self.attn_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "attn_dim {} is not divisible by {} heads",
                self.attn_dim, self.heads
            )));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("conv_kernel {} must be odd", self.conv_kernel)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.attn_dim / self.heads
    }
}

/// Valid lengths of a padded batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    lengths: Vec<usize>,
    padded: usize,
}

impl AttentionMask {
    pub fn new(lengths: Vec<usize>, padded: usize) -> Result<Self> {
        if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || l > padded) {
            return Err(Error::InvalidShape {
                op: "attention_mask",
                reason: format!("valid length {bad} outside 1..={padded}"),
            });
        }
        Ok(Self { lengths, padded })
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn padded(&self) -> usize {
        self.padded
    }
}

/// Forward-pass state threaded through every layer.
pub struct Ctx<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub params: &'a ParamSet<T>,
    training: bool,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn inference(tape: &'a mut Tape<T>, params: &'a ParamSet<T>) -> Self {
        Self {
            tape,
            params,
            training: false,
            rng: None,
        }
    }

    /// Training mode: dropout masks are drawn from `rng`.
    pub fn training(tape: &'a mut Tape<T>, params: &'a ParamSet<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            tape,
            params,
            training: true,
            rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn param(&mut self, id: ParamId) -> Var<T> {
        self.params.var(self.tape, id)
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&mut self, x: &Var<T>, p: f64) -> Result<Var<T>> {
        if !self.training || p == 0.0 {
            return Ok(x.clone());
        }
        let rng = self.rng.as_mut().expect("training context has an rng");
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..x.value().numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mask = Tensor::new(x.shape(), mask)?;
        self.tape.mul_const(x, mask)
    }
}

/// Registers parameters with deterministic initialization: weights uniform in
/// `±sqrt(1/fan_in)`, biases zero, normalization gains one.
pub struct Init<'a> {
    params: &'a mut ParamSet<f64>,
    rng: Option<ChaCha8Rng>,
}

impl<'a> Init<'a> {
    pub fn new(params: &'a mut ParamSet<f64>, seed: u64) -> Self {
        Self {
            params,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    /// Registers every parameter as zeros; used when values are loaded afterwards.
    pub fn zeroed(params: &'a mut ParamSet<f64>) -> Self {
        Self { params, rng: None }
    }

    pub fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let Some(rng) = &mut self.rng else {
            return self.params.register(name, Tensor::zeros(shape));
        };
        let bound = 1.0 / num_traits::Float::sqrt(fan_in as f64);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.params.register(name, Tensor::new(shape, data)?)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> Result<ParamId> {
        self.params.register(name, Tensor::full(shape, value))
    }
}
