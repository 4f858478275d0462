//! Log-mel feature matrices and the utterance-level transforms applied to
//! them before they reach an encoder.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::Tensor;
use crate::{Error, Result};

/// Mel bins per frame.
pub const FEATURE_DIM: usize = 80;
pub const SAMPLE_RATE: usize = 16_000;
pub const FRAME_LENGTH_MS: usize = 25;
pub const FRAME_SHIFT_MS: usize = 10;
/// 25 ms at 16 kHz.
pub const WINDOW_SAMPLES: usize = 400;
/// 10 ms at 16 kHz.
pub const HOP_SAMPLES: usize = 160;

const VARIANCE_FLOOR: f64 = 1e-8;
const FREQ_MASKS: usize = 2;
const FREQ_MASK_MAX: usize = 10;
const TIME_MASKS: usize = 2;
const TIME_MASK_RATIO: f64 = 0.05;

/// Number of analysis frames for `samples` of audio.
pub fn frame_count(samples: usize) -> Result<usize> {
    if samples < WINDOW_SAMPLES {
        return Err(Error::TooShort {
            len: samples,
            min: WINDOW_SAMPLES,
        });
    }
    Ok((samples - WINDOW_SAMPLES) / HOP_SAMPLES + 1)
}

/// `[T, 80]` log-mel frames, 25 ms windows every 10 ms.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: Tensor<f64>,
}

impl FeatureMatrix {
    pub fn new(frames: Tensor<f64>) -> Result<Self> {
        if frames.rank() != 2 || frames.shape()[1] != FEATURE_DIM {
            return Err(Error::InvalidShape {
                op: "features",
                reason: alloc::format!("expected [T, {FEATURE_DIM}], got {:?}", frames.shape()),
            });
        }
        Ok(Self { frames })
    }

    pub fn from_rows(rows: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Tensor::new(&[rows, FEATURE_DIM], data)?)
    }

    pub fn frames(&self) -> &Tensor<f64> {
        &self.frames
    }

    pub fn into_tensor(self) -> Tensor<f64> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Per-dimension zero mean and unit variance over the utterance's frames.
pub fn normalize(feats: &FeatureMatrix) -> FeatureMatrix {
    let t = feats.len();
    let data = feats.frames.data();
    let mut mean = [0.0; FEATURE_DIM];
    for row in data.chunks_exact(FEATURE_DIM) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let mut var = [0.0; FEATURE_DIM];
    for row in data.chunks_exact(FEATURE_DIM) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let inv_std: Vec<f64> = var
        .iter()
        .map(|&s| 1.0 / (s / t as f64).max(VARIANCE_FLOOR).sqrt())
        .collect();
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks_exact(FEATURE_DIM) {
        for i in 0..FEATURE_DIM {
            out.push((row[i] - mean[i]) * inv_std[i]);
        }
    }
    FeatureMatrix::from_rows(t, out).expect("same shape")
}

/// One rectangular mask: along frequency (`axis_freq`) or time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskSpan {
    pub axis_freq: bool,
    pub start: usize,
    pub width: usize,
}

/// SpecAugment-style masking: two frequency masks of width `0..=10` bins and
/// two time masks of width `0..=floor(0.05·T)` frames. Masked cells take the
/// utterance's mean feature value.
///
/// Draw order from `ChaCha8Rng::seed_from_u64(seed)`: for each frequency mask
/// then each time mask, `width` then `start` (uniform in `0..=extent-width`).
pub fn mask_augment(feats: &FeatureMatrix, seed: u64) -> (FeatureMatrix, Vec<MaskSpan>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = feats.len();
    let mut spans = Vec::with_capacity(FREQ_MASKS + TIME_MASKS);
    for _ in 0..FREQ_MASKS {
        let width = rng.random_range(0..=FREQ_MASK_MAX);
        let start = rng.random_range(0..=FEATURE_DIM - width);
        spans.push(MaskSpan {
            axis_freq: true,
            start,
            width,
        });
    }
    let max_time = ((t as f64) * TIME_MASK_RATIO) as usize;
    for _ in 0..TIME_MASKS {
        let width = rng.random_range(0..=max_time);
        let start = rng.random_range(0..=t - width);
        spans.push(MaskSpan {
            axis_freq: false,
            start,
            width,
        });
    }
    let data = feats.frames.data();
    let fill = data.iter().sum::<f64>() / data.len() as f64;
    let mut out = data.to_vec();
    for span in &spans {
        for i in span.start..span.start + span.width {
            if span.axis_freq {
                for r in 0..t {
                    out[r * FEATURE_DIM + i] = fill;
                }
            } else {
                out[i * FEATURE_DIM..(i + 1) * FEATURE_DIM].fill(fill);
            }
        }
    }
    (FeatureMatrix::from_rows(t, out).expect("same shape"), spans)
}
