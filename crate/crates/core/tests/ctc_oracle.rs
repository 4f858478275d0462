use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uconv_core::ctc::oracle::{brute_force_loss, most_probable_labelling};
use uconv_core::ctc::{beam_search, ctc_loss_and_grad, feasible, greedy_decode, CtcTargets};
use uconv_core::Tensor;

fn random_logits(rng: &mut ChaCha8Rng, t: usize, v: usize, scale: f64) -> Tensor<f64> {
    let data = (0..t * v).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(&[t, v], data).unwrap()
}

#[test]
fn loss_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    while checked < 200 {
        let t = rng.random_range(1..=8);
        let v = rng.random_range(2..=4);
        let n = rng.random_range(0..=3);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(1..v)).collect();
        let targets = CtcTargets::new(labels.clone(), v).unwrap();
        if !feasible(t, &targets) {
            continue;
        }
        let logits = random_logits(&mut rng, t, v, 3.0);
        let (loss, _) = ctc_loss_and_grad(&logits, t, &targets).unwrap();
        let oracle = brute_force_loss(&logits, &labels);
        assert!(
            (loss - oracle).abs() < 1e-9,
            "T={t} V={v} y={labels:?}: {loss} vs {oracle}"
        );
        assert!(loss >= 0.0);
        checked += 1;
    }
}

#[test]
fn beam_top_matches_most_probable_labelling() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut misses = Vec::new();
    for i in 0..100 {
        let t = rng.random_range(1..=6);
        let v = rng.random_range(2..=4);
        let logits = random_logits(&mut rng, t, v, 3.0);
        let (best, _) = most_probable_labelling(&logits);
        let top = &beam_search(&logits, 20)[0];
        if top.labels != best {
            misses.push(i);
        }
    }
    assert!(misses.is_empty(), "beam 20 missed the exact labelling on {misses:?}");
}

#[test]
fn beam_agrees_with_greedy_on_peaked_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let t = rng.random_range(1..=12);
        let v = 5;
        let mut data = vec![0.0; t * v];
        for row in data.chunks_exact_mut(v) {
            row[rng.random_range(0..v)] = 6.0;
        }
        let logits = Tensor::new(&[t, v], data).unwrap();
        assert_eq!(beam_search(&logits, 20)[0].labels, greedy_decode(&logits));
        assert_eq!(beam_search(&logits, 1)[0].labels, greedy_decode(&logits));
    }
}

#[test]
fn wider_beam_never_scores_worse() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let t = rng.random_range(1..=8);
        let logits = random_logits(&mut rng, t, 4, 2.0);
        let narrow = beam_search(&logits, 1)[0].score();
        let wide = beam_search(&logits, 20)[0].score();
        assert!(wide >= narrow - 1e-12);
    }
}
