//! Temporal resolution machinery: reduction policies, the x4 convolutional
//! frontend, Downsampling x2 blocks, nearest-neighbour upsampling and skip
//! connections, plus the exact length arithmetic they imply.

mod blocks;
mod policy;

use alloc::vec::Vec;

use crate::{Error, Result};

pub use blocks::{skip_combine, upsample_x2, DownsampleX2, FrontendX4};
pub use policy::{ReductionPolicy, Transition, DEFAULT_TOTAL_LAYERS};

/// `ceil(len / 2)`: stride-2, kernel-3, padding-1 convolution output length.
pub fn halve(len: usize) -> usize {
    len.div_ceil(2)
}

/// Frames left after the x4 frontend.
pub fn frontend_len(len: usize) -> usize {
    halve(halve(len))
}

/// One Conformer stage of a policy with the length of the sequence entering it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub level: usize,
    pub layers: usize,
    pub len: usize,
}

/// Stage-by-stage lengths for an input of a given length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

impl StagePlan {
    /// Ceil-halving for every downsample; every upsample doubles and is
    /// truncated to the length of the skip branch at the level it returns to.
    pub fn new(policy: &ReductionPolicy, input_len: usize) -> Result<Self> {
        if input_len == 0 {
            return Err(Error::DegenerateInput { utterance: 0, stage: 0 });
        }
        let levels = policy.levels();
        let mut skips: Vec<(usize, usize)> = Vec::new();
        let mut len = frontend_len(input_len);
        let mut stages = Vec::with_capacity(levels.len());
        for (i, (&level, &layers)) in levels.iter().zip(policy.layers()).enumerate() {
            if i > 0 {
                len = match policy.transition(i) {
                    Transition::Down => {
                        record_skip(&mut skips, levels[i - 1], len);
                        halve(len)
                    }
                    Transition::Up => {
                        let skip = lookup_skip(&skips, level)?;
                        if 2 * len < skip {
                            return Err(Error::Alignment {
                                upsampled: 2 * len,
                                skip,
                            });
                        }
                        skip
                    }
                };
            }
            if len == 0 {
                return Err(Error::DegenerateInput { utterance: 0, stage: i });
            }
            stages.push(Stage { level, layers, len });
        }
        Ok(Self { stages })
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.len).collect()
    }

    /// Length of the encoder output.
    pub fn output_len(&self) -> usize {
        self.stages.last().expect("non-empty").len
    }
}

pub(crate) fn record_skip<V>(skips: &mut Vec<(usize, V)>, level: usize, value: V) {
    skips.retain(|(l, _)| *l != level);
    skips.push((level, value));
}

pub(crate) fn lookup_skip<V: Clone>(skips: &[(usize, V)], level: usize) -> Result<V> {
    skips
        .iter()
        .rev()
        .find(|(l, _)| *l == level)
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::Config(alloc::format!("no skip connection recorded at level x{level}")))
}

/// Length entering each Conformer stage for an input of `input_len` frames.
pub fn stage_lengths(policy: &ReductionPolicy, input_len: usize) -> Result<Vec<usize>> {
    Ok(StagePlan::new(policy, input_len)?.lengths())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy(levels: &str, layers: &str) -> ReductionPolicy {
        ReductionPolicy::parse(levels, Some(layers)).unwrap()
    }

    #[test]
    fn lengths_for_thirty_seconds() {
        assert_eq!(stage_lengths(&policy("x4", "12"), 2998).unwrap(), [750]);
        assert_eq!(stage_lengths(&policy("x4-x8", "4-8"), 2998).unwrap(), [750, 375]);
        assert_eq!(
            stage_lengths(&policy("x4-x8-x16-x8", "3-3-3-3"), 2998).unwrap(),
            [750, 375, 188, 375]
        );
        assert_eq!(
            stage_lengths(&policy("x4-x8-x16-x32-x16-x8", "2-2-2-2-2-2"), 2998).unwrap(),
            [750, 375, 188, 94, 188, 375]
        );
    }

    #[test]
    fn small_inputs() {
        assert_eq!(frontend_len(4), 1);
        assert_eq!(frontend_len(1), 1);
        assert_eq!(
            stage_lengths(&policy("x4-x8-x16-x8", "1-1-1-1"), 1).unwrap(),
            [1, 1, 1, 1]
        );
        assert!(matches!(
            stage_lengths(&policy("x4", "1"), 0),
            Err(Error::DegenerateInput { .. })
        ));
    }

    #[test]
    fn graphemes_policy_returns_to_x4() {
        let lens = stage_lengths(&policy("x4-x8-x16-x8-x4", "2-2-4-2-2"), 2998).unwrap();
        assert_eq!(lens, [750, 375, 188, 375, 750]);
    }
}
