//! Seeded synthetic utterances: features for timing runs and label-structured
//! features for toy training.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{frame_count, FEATURE_DIM, SAMPLE_RATE};
use crate::numerics::Tensor;
use crate::{Error, Result};

/// Seed of the per-label feature prototypes shared by every utterance.
const PROTOTYPE_SEED: u64 = 0x05ee_d0f1_abe1;
const NOISE: f64 = 0.3;
/// Fraction of each label segment filled with the label's prototype.
const CORE: f64 = 0.6;

/// Feature matrix plus the transcript it was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub features: Tensor<f64>,
    pub labels: Vec<usize>,
}

/// Frames of `seconds` of 16 kHz audio.
pub fn frames_for(seconds: f64) -> Result<usize> {
    if !seconds.is_finite() || seconds < 0.0 {
        return Err(Error::Config(alloc::format!("invalid duration {seconds}")));
    }
    frame_count((seconds * SAMPLE_RATE as f64) as usize)
}

/// Uniform noise features of the given duration.
pub fn noise_features(seconds: f64, seed: u64) -> Result<Tensor<f64>> {
    let frames = frames_for(seconds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(&[frames, FEATURE_DIM], data)
}

fn prototypes(vocab: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROTOTYPE_SEED);
    (0..vocab)
        .map(|_| (0..FEATURE_DIM).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect()
}

/// A random transcript of `len` labels from `1..vocab` and features in which
/// every label owns an equal time segment. The middle of each segment carries
/// that label's fixed prototype, the edges carry the blank prototype, and
/// everything gets seeded noise.
pub fn utterance(seconds: f64, len: usize, vocab: usize, seed: u64) -> Result<SyntheticUtterance> {
    if vocab < 2 {
        return Err(Error::Config("vocabulary needs at least one non-blank label".into()));
    }
    let frames = frames_for(seconds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..len).map(|_| rng.random_range(1..vocab)).collect();
    let protos = prototypes(vocab);
    let mut data = Vec::with_capacity(frames * FEATURE_DIM);
    for t in 0..frames {
        let label = if len == 0 {
            0
        } else {
            let pos = t as f64 * len as f64 / frames as f64;
            let seg = (pos as usize).min(len - 1);
            let offset = pos - seg as f64;
            if (offset - 0.5).abs() <= CORE / 2.0 {
                labels[seg]
            } else {
                0
            }
        };
        for &p in &protos[label] {
            data.push(p + rng.random_range(-NOISE..NOISE));
        }
    }
    Ok(SyntheticUtterance {
        features: Tensor::new(&[frames, FEATURE_DIM], data)?,
        labels,
    })
}

/// `count` utterances with seeds derived from `seed`.
pub fn corpus(count: usize, seconds: f64, len: usize, vocab: usize, seed: u64) -> Result<Vec<SyntheticUtterance>> {
    (0..count)
        .map(|i| utterance(seconds, len, vocab, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_seconds_is_2998_frames() {
        assert_eq!(noise_features(30.0, 1).unwrap().shape(), &[2998, FEATURE_DIM]);
        assert!(matches!(noise_features(0.0, 1), Err(Error::TooShort { .. })));
    }

    #[test]
    fn deterministic() {
        assert_eq!(utterance(1.0, 4, 9, 3).unwrap(), utterance(1.0, 4, 9, 3).unwrap());
        assert_ne!(utterance(1.0, 4, 9, 3).unwrap(), utterance(1.0, 4, 9, 4).unwrap());
    }
}
