//! Conformer and Uconv-Conformer sequence encoders built on a small
//! reverse-mode autodiff engine, together with a CTC objective, decoders and
//! a toy-scale trainer.
//!
//! The crate is `no_std` + `alloc`. Enabling the default `std` feature only
//! switches the float math and GEMM kernels to their `std`-backed variants
//! (runtime CPU feature detection, system libm).
//!
//! Layout:
//!
//! ```text
//! numerics   tensors, scalar trait, kernels, tape-based autodiff
//! features   feature matrices, per-utterance normalization, mask augmentation
//! layers     Conformer block sublayers (FFN, relative-position MHSA, conv module)
//! reduction  reduction policies, x4 frontend, x2 down/upsampling, skip combination
//! model      encoder assembly, forward pass, parameter counting, checkpoints
//! ctc        CTC loss, feasibility, intermediate-loss blending, decoders
//! trainer    Adam, warmup schedule, toy training loop
//! checks     property suites (oracles, gradients, lengths, parameter budgets)
//! synth      seeded synthetic utterances
//! ```

#![no_std]
#![deny(unsafe_op_in_unsafe_fn)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod checks;
pub mod ctc;
pub mod error;
pub mod features;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod reduction;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{Real, Tensor};
