//! Exhaustive path enumeration over all `V^T` alignments. Exponential; only
//! for small instances.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{log_add, BLANK};
use crate::numerics::{kernels, Real, Tensor};

fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = BLANK;
    for &k in path {
        if k != BLANK && k != prev {
            out.push(k);
        }
        prev = k;
    }
    out
}

/// Log probability of every labelling reachable from some path.
pub fn labelling_log_probs<T: Real>(logits: &Tensor<T>) -> BTreeMap<Vec<usize>, f64> {
    let v = logits.last_dim();
    let t = logits.rows();
    let lp = kernels::log_softmax(&logits.cast::<f64>());
    let lp = lp.data();
    let mut out = BTreeMap::new();
    let mut path = alloc::vec![0usize; t];
    loop {
        let score: f64 = path.iter().enumerate().map(|(i, &k)| lp[i * v + k]).sum();
        let entry = out.entry(collapse(&path)).or_insert(f64::NEG_INFINITY);
        *entry = log_add(*entry, score);
        let mut i = t;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            path[i] += 1;
            if path[i] < v {
                break;
            }
            path[i] = 0;
        }
    }
}

/// `−log P(labels | logits)`; infinite when no path collapses to `labels`.
pub fn brute_force_loss<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> f64 {
    -labelling_log_probs(logits)
        .get(labels)
        .copied()
        .unwrap_or(f64::NEG_INFINITY)
}

/// Most probable labelling and its log probability; ties go to the
/// lexicographically smallest labelling.
pub fn most_probable_labelling<T: Real>(logits: &Tensor<T>) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for (labels, lp) in labelling_log_probs(logits) {
        if best.as_ref().is_none_or(|(_, b)| lp > *b) {
            best = Some((labels, lp));
        }
    }
    best.expect("at least one path")
}
