//! Encoder assembly from a configuration, forward passes producing final and
//! intermediate logits, parameter counting and checkpoints.
//!
//! Parameter count of an encoder, with `d` the attention dimension, `f` the
//! FFN size, `k` the conformer kernel, `C` the frontend filters, `D` the
//! Downsampling x2 inner width and `V` the vocabulary:
//!
//! ```text
//! frontend      (9C + C) + (9C² + C) + (20C·d + d)
//! ffn           2d + (d·f + f) + (f·d + d)
//! mhsa          2d + 4(d² + d) + d² + 2d
//! conv module   2d + (2d² + 2d) + (k·d + d) + 2d + (d² + d)
//! block         2·ffn + mhsa + conv module + 2d
//! downsample    (3dD + D) + (3D² + D) + (D·d + d)
//! output        d·V + V
//! total         frontend + layers·block + downsamples·downsample + output
//! ```

mod checkpoint;
mod config;
mod encoder;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{
    EncoderConfig, DEFAULT_DOWNSAMPLE_DIM, DEFAULT_FRONTEND_CHANNELS, DEFAULT_LAMBDA, DEFAULT_SEED, DEFAULT_VOCAB,
    PRESETS, TOY_VOCAB,
};
pub use encoder::{align_for_interctc, Encoder, EncoderOutput, Section, SequenceBatch, StageObserver, UtteranceLogits};
