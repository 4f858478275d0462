//! CTC objective in log space, feasibility checking, intermediate-loss
//! blending, and best-path / prefix beam-search decoding. Label 0 is the blank.

mod decode;
pub mod oracle;

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::numerics::{kernels, Real, Tape, Tensor, Var};
use crate::{Error, Result};

pub use decode::{beam_search, greedy_decode, Hypothesis};

pub const BLANK: usize = 0;

/// `log(exp(a) + exp(b))` with max subtraction.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Label sequence of one utterance; every label lies in `1..vocab`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CtcTargets {
    labels: Vec<usize>,
}

impl CtcTargets {
    pub fn new(labels: Vec<usize>, vocab: usize) -> Result<Self> {
        if let Some(&label) = labels.iter().find(|&&l| l == BLANK || l >= vocab) {
            return Err(Error::Label { label, vocab });
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Frames needed to emit these labels: one each plus a blank between
    /// every pair of equal neighbours.
    pub fn required_frames(&self) -> usize {
        self.labels.len() + self.labels.windows(2).filter(|w| w[0] == w[1]).count()
    }
}

/// Whether `frames` outputs can carry `targets` under the collapse rule.
pub fn feasible(frames: usize, targets: &CtcTargets) -> bool {
    frames >= targets.required_frames()
}

fn check_feasible(frames: usize, targets: &CtcTargets) -> Result<()> {
    if feasible(frames, targets) {
        Ok(())
    } else {
        Err(Error::Infeasible {
            frames,
            labels: targets.len(),
            required: targets.required_frames(),
        })
    }
}

/// Negative log-likelihood and its gradient with respect to the logits of
/// the first `valid` rows; padded rows get zero gradient.
pub fn ctc_loss_and_grad<T: Real>(logits: &Tensor<T>, valid: usize, targets: &CtcTargets) -> Result<(f64, Tensor<T>)> {
    if logits.rank() != 2 || valid == 0 || valid > logits.rows() {
        return Err(Error::InvalidShape {
            op: "ctc_loss",
            reason: alloc::format!("logits {:?} with {valid} valid frames", logits.shape()),
        });
    }
    let v = logits.last_dim();
    CtcTargets::new(targets.labels.clone(), v)?;
    check_feasible(valid, targets)?;

    let lp = kernels::log_softmax(&logits.narrow_rows(0, valid)?.cast::<f64>());
    let lp = lp.data();
    let ext: Vec<usize> = core::iter::once(BLANK)
        .chain(targets.labels.iter().flat_map(|&l| [l, BLANK]))
        .collect();
    let s = ext.len();
    let skip = |j: usize| j >= 2 && ext[j] != BLANK && ext[j] != ext[j - 2];
    let ninf = f64::NEG_INFINITY;

    let mut alpha = vec![ninf; valid * s];
    alpha[0] = lp[ext[0]];
    if s > 1 {
        alpha[1] = lp[ext[1]];
    }
    for t in 1..valid {
        for j in 0..s {
            let mut a = alpha[(t - 1) * s + j];
            if j >= 1 {
                a = log_add(a, alpha[(t - 1) * s + j - 1]);
            }
            if skip(j) {
                a = log_add(a, alpha[(t - 1) * s + j - 2]);
            }
            alpha[t * s + j] = a + lp[t * v + ext[j]];
        }
    }
    let last = (valid - 1) * s;
    let log_z = if s > 1 {
        log_add(alpha[last + s - 1], alpha[last + s - 2])
    } else {
        alpha[last]
    };

    let mut beta = vec![ninf; valid * s];
    beta[last + s - 1] = lp[(valid - 1) * v + ext[s - 1]];
    if s > 1 {
        beta[last + s - 2] = lp[(valid - 1) * v + ext[s - 2]];
    }
    for t in (0..valid - 1).rev() {
        for j in 0..s {
            let mut b = beta[(t + 1) * s + j];
            if j + 1 < s {
                b = log_add(b, beta[(t + 1) * s + j + 1]);
            }
            if j + 2 < s && skip(j + 2) {
                b = log_add(b, beta[(t + 1) * s + j + 2]);
            }
            beta[t * s + j] = b + lp[t * v + ext[j]];
        }
    }

    let mut grad = vec![T::zero(); logits.numel()];
    let mut occupancy = vec![ninf; v];
    for t in 0..valid {
        occupancy.fill(ninf);
        for j in 0..s {
            let gamma = alpha[t * s + j] + beta[t * s + j] - lp[t * v + ext[j]];
            occupancy[ext[j]] = log_add(occupancy[ext[j]], gamma);
        }
        for k in 0..v {
            let p = lp[t * v + k].exp();
            let q = (occupancy[k] - log_z).exp();
            grad[t * v + k] = T::from_f64(p - q);
        }
    }
    Ok((-log_z, Tensor::new(logits.shape(), grad)?))
}

/// CTC loss of `logits` (first `valid` rows) recorded on the tape.
pub fn ctc_loss<T: Real>(tape: &mut Tape<T>, logits: &Var<T>, valid: usize, targets: &CtcTargets) -> Result<Var<T>> {
    let (loss, grad) = ctc_loss_and_grad(logits.value(), valid, targets)?;
    tape.scalar_fn(logits, T::from_f64(loss), grad)
}

/// `(1 − λ)·final + λ·mean(intermediate)`; `final` alone if there are none.
pub fn combined_loss<T: Real>(
    tape: &mut Tape<T>,
    final_loss: &Var<T>,
    intermediate: &[Var<T>],
    lambda: f64,
) -> Result<Var<T>> {
    if intermediate.is_empty() {
        return Ok(final_loss.clone());
    }
    let mut sum = intermediate[0].clone();
    for l in &intermediate[1..] {
        sum = tape.add(&sum, l)?;
    }
    let mean = tape.scale(&sum, 1.0 / intermediate.len() as f64);
    let a = tape.scale(final_loss, 1.0 - lambda);
    let b = tape.scale(&mean, lambda);
    tape.add(&a, &b)
}

/// Scalar form of [`combined_loss`].
pub fn combine(final_loss: f64, intermediate: &[f64], lambda: f64) -> f64 {
    if intermediate.is_empty() {
        return final_loss;
    }
    let mean = intermediate.iter().sum::<f64>() / intermediate.len() as f64;
    (1.0 - lambda) * final_loss + lambda * mean
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(labels: &[usize]) -> CtcTargets {
        CtcTargets::new(labels.to_vec(), 10).unwrap()
    }

    #[test]
    fn feasibility_examples() {
        assert!(feasible(3, &t(&[1, 1])));
        assert!(!feasible(2, &t(&[1, 1])));
        assert!(feasible(1, &t(&[])));
        assert!(feasible(0, &t(&[])));
    }

    #[test]
    fn rejects_blank_and_out_of_range_labels() {
        assert_eq!(CtcTargets::new(vec![0], 4), Err(Error::Label { label: 0, vocab: 4 }));
        assert_eq!(CtcTargets::new(vec![4], 4), Err(Error::Label { label: 4, vocab: 4 }));
    }

    #[test]
    fn uniform_two_frames_single_label() {
        let logits = Tensor::<f64>::zeros(&[2, 2]);
        let (loss, _) = ctc_loss_and_grad(&logits, 2, &CtcTargets::new(vec![1], 2).unwrap()).unwrap();
        assert!((loss + 0.75f64.ln()).abs() < 1e-12);
        assert!((loss - 0.287_682_072_451_780_9).abs() < 1e-12);
    }

    #[test]
    fn certain_blank_path_has_zero_loss() {
        let logits =
            Tensor::<f64>::from_f64(&[3, 3], &[50.0, -50.0, -50.0, 50.0, -50.0, -50.0, 50.0, -50.0, -50.0]).unwrap();
        let (loss, _) = ctc_loss_and_grad(&logits, 3, &t(&[])).unwrap();
        assert!(loss.abs() < 1e-12, "{loss}");
    }

    #[test]
    fn infeasible_is_an_error() {
        let logits = Tensor::<f64>::zeros(&[2, 3]);
        let err = ctc_loss_and_grad(&logits, 2, &CtcTargets::new(vec![1, 1], 3).unwrap()).unwrap_err();
        assert_eq!(
            err,
            Error::Infeasible {
                frames: 2,
                labels: 2,
                required: 3
            }
        );
    }

    #[test]
    fn blend() {
        assert_eq!(combine(2.0, &[4.0], 0.5), 3.0);
        assert_eq!(combine(2.0, &[3.0, 5.0], 0.5), 3.0);
        assert_eq!(combine(2.0, &[7.0], 0.0), 2.0);
        assert_eq!(combine(2.0, &[], 0.5), 2.0);
    }
}
