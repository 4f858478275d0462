use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{log_add, BLANK};
use crate::numerics::{kernels, Real, Tensor};

/// A decoded prefix with its blank-ending and label-ending log probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub labels: Vec<usize>,
    pub log_blank: f64,
    pub log_label: f64,
}

impl Hypothesis {
    pub fn score(&self) -> f64 {
        log_add(self.log_blank, self.log_label)
    }
}

/// Per-frame argmax (lowest index wins ties), repeats collapsed, blanks removed.
pub fn greedy_decode<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let v = logits.last_dim();
    let mut out = Vec::new();
    let mut prev = BLANK;
    for row in logits.data().chunks_exact(v) {
        let mut best = 0;
        for (k, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = k;
            }
        }
        if best != BLANK && best != prev {
            out.push(best);
        }
        prev = best;
    }
    out
}

/// CTC prefix beam search over the per-frame log-softmax of `logits`.
///
/// After every frame the `beam` prefixes with the highest total log
/// probability survive; equal scores are ordered by ascending prefix. Returns
/// the surviving prefixes best first.
pub fn beam_search<T: Real>(logits: &Tensor<T>, beam: usize) -> Vec<Hypothesis> {
    let beam = beam.max(1);
    let v = logits.last_dim();
    let lp = kernels::log_softmax(&logits.cast::<f64>());
    let ninf = f64::NEG_INFINITY;

    let mut hyps = alloc::vec![Hypothesis {
        labels: Vec::new(),
        log_blank: 0.0,
        log_label: ninf,
    }];
    for frame in lp.data().chunks_exact(v) {
        let mut next: BTreeMap<Vec<usize>, (f64, f64)> = BTreeMap::new();
        for h in &hyps {
            let total = h.score();
            let entry = next.entry(h.labels.clone()).or_insert((ninf, ninf));
            entry.0 = log_add(entry.0, total + frame[BLANK]);
            let last = h.labels.last().copied();
            for (c, &lpc) in frame.iter().enumerate().skip(1) {
                if last == Some(c) {
                    let same = next.get_mut(&h.labels).expect("inserted above");
                    same.1 = log_add(same.1, h.log_label + lpc);
                    let mut ext = h.labels.clone();
                    ext.push(c);
                    let e = next.entry(ext).or_insert((ninf, ninf));
                    e.1 = log_add(e.1, h.log_blank + lpc);
                } else {
                    let mut ext = h.labels.clone();
                    ext.push(c);
                    let e = next.entry(ext).or_insert((ninf, ninf));
                    e.1 = log_add(e.1, total + lpc);
                }
            }
        }
        hyps = next
            .into_iter()
            .map(|(labels, (log_blank, log_label))| Hypothesis {
                labels,
                log_blank,
                log_label,
            })
            .collect();
        rank(&mut hyps);
        hyps.truncate(beam);
    }
    hyps
}

fn rank(hyps: &mut [Hypothesis]) {
    hyps.sort_by(|a, b| b.score().total_cmp(&a.score()).then_with(|| a.labels.cmp(&b.labels)));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peaked(path: &[usize], v: usize) -> Tensor<f64> {
        let mut data = alloc::vec![0.0; path.len() * v];
        for (t, &k) in path.iter().enumerate() {
            data[t * v + k] = 8.0;
        }
        Tensor::new(&[path.len(), v], data).unwrap()
    }

    #[test]
    fn greedy_collapses() {
        assert_eq!(greedy_decode(&peaked(&[1, 1, 0, 1], 3)), [1, 1]);
        assert!(greedy_decode(&peaked(&[0, 0, 0], 3)).is_empty());
        assert_eq!(greedy_decode(&Tensor::<f64>::zeros(&[2, 3])), alloc::vec![]);
    }

    #[test]
    fn beam_one_matches_greedy_on_peaked_input() {
        let path = [2, 2, 0, 1, 1, 3, 0, 3];
        let logits = peaked(&path, 4);
        assert_eq!(beam_search(&logits, 1)[0].labels, greedy_decode(&logits));
        assert_eq!(beam_search(&logits, 20)[0].labels, greedy_decode(&logits));
    }

    #[test]
    fn ranked_and_unique() {
        let logits = Tensor::<f64>::from_f64(&[3, 3], &[0.1, 0.5, -0.2, 0.3, 0.0, 0.4, -0.1, 0.2, 0.3]).unwrap();
        let hyps = beam_search(&logits, 20);
        for w in hyps.windows(2) {
            assert!(w[0].score() >= w[1].score());
            assert_ne!(w[0].labels, w[1].labels);
        }
        assert_eq!(hyps, beam_search(&logits, 20));
    }
}
