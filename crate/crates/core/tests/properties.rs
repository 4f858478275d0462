use proptest::prelude::*;
use uconv_core::ctc::{ctc_loss_and_grad, feasible, greedy_decode, CtcTargets, BLANK};
use uconv_core::features::{mask_augment, normalize, FeatureMatrix, FEATURE_DIM};
use uconv_core::model::{Encoder, EncoderConfig, SequenceBatch};
use uconv_core::reduction::{stage_lengths, ReductionPolicy};
use uconv_core::Tensor;

fn policy() -> impl Strategy<Value = ReductionPolicy> {
    (1usize..6, any::<u64>()).prop_map(|(n, bits)| {
        let mut levels = vec![4usize];
        for i in 1..n {
            let last = levels[i - 1];
            let down = last == 4 || (bits >> i) & 1 == 1;
            levels.push(if down { last * 2 } else { last / 2 });
        }
        let layers = levels
            .iter()
            .enumerate()
            .map(|(i, _)| ((bits >> (8 + i)) & 1) as usize + 1)
            .collect();
        ReductionPolicy::new(levels, layers).unwrap()
    })
}

fn matrix(rows: usize, seed: u64) -> Tensor<f64> {
    let mut s = seed | 1;
    let data = (0..rows * FEATURE_DIM)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s % 2000) as f64 / 1000.0 - 1.0
        })
        .collect();
    Tensor::new(&[rows, FEATURE_DIM], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stage_lengths_halve_with_ceiling(policy in policy(), t in 16usize..6000) {
        let lens = stage_lengths(&policy, t).unwrap();
        let levels = policy.levels();
        prop_assert_eq!(lens[0], t.div_ceil(2).div_ceil(2));
        for i in 1..lens.len() {
            if levels[i] > levels[i - 1] {
                prop_assert_eq!(lens[i], lens[i - 1].div_ceil(2));
            }
        }
        let ideal = t as f64 / policy.final_reduction() as f64;
        prop_assert!((*lens.last().unwrap() as f64 - ideal).abs() <= 2.0);
    }

    #[test]
    fn config_text_round_trips(policy in policy(), vocab in 2usize..300, inter in any::<bool>(), seed in any::<u64>()) {
        let mut config = EncoderConfig::toy(vocab);
        config.policy = policy;
        config.intermediate_ctc = inter;
        config.seed = seed;
        prop_assert_eq!(EncoderConfig::parse(&config.to_text()).unwrap(), config);
    }

    #[test]
    fn padding_does_not_change_valid_logits(t in 20usize..90, pad in 1usize..40, seed in any::<u64>()) {
        let encoder = Encoder::build(&EncoderConfig::toy(6), seed % 7).unwrap();
        let feats = matrix(t, seed);
        let alone = encoder.logits(&feats).unwrap();
        let other = matrix(t + pad, seed ^ 0xabc);
        let batch = SequenceBatch::from_utterances(&[feats, other], 0).unwrap();
        let out = encoder.forward(&batch).unwrap();
        let valid = out.lengths[0];
        prop_assert_eq!(valid, alone.rows());
        let padded = &out.final_logits[0];
        for (a, b) in alone.data().iter().zip(&padded.data()[..valid * 6]) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_is_deterministic(t in 8usize..60, seed in any::<u64>()) {
        let encoder = Encoder::build(&EncoderConfig::toy(5), seed % 5).unwrap();
        let feats = matrix(t, seed);
        let a = encoder.logits(&feats).unwrap();
        let b = encoder.logits(&feats).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn ctc_gradient_rows_sum_to_zero(t in 1usize..12, v in 2usize..6, labels in prop::collection::vec(1usize..6, 0..5), seed in any::<u64>()) {
        let labels: Vec<usize> = labels.into_iter().map(|l| 1 + (l - 1) % (v - 1)).collect();
        let targets = CtcTargets::new(labels, v).unwrap();
        prop_assume!(feasible(t, &targets));
        let mut s = seed | 1;
        let data: Vec<f64> = (0..(t + 2) * v).map(|_| { s = s.wrapping_mul(6364136223846793005).wrapping_add(1); (s >> 40) as f64 / (1u64 << 24) as f64 * 6.0 - 3.0 }).collect();
        let logits = Tensor::new(&[t + 2, v], data).unwrap();
        let (loss, grad) = ctc_loss_and_grad(&logits, t, &targets).unwrap();
        prop_assert!(loss.is_finite() && loss >= -1e-12);
        for (r, row) in grad.data().chunks_exact(v).enumerate() {
            let sum: f64 = row.iter().sum();
            if r < t {
                prop_assert!(sum.abs() < 1e-9);
            } else {
                prop_assert!(row.iter().all(|&g| g == 0.0));
            }
        }
    }

    #[test]
    fn feasibility_is_monotone_in_frames(t in 0usize..20, labels in prop::collection::vec(1usize..4, 0..8)) {
        let targets = CtcTargets::new(labels, 4).unwrap();
        if feasible(t, &targets) {
            prop_assert!(feasible(t + 1, &targets));
        }
        prop_assert_eq!(feasible(targets.required_frames(), &targets), true);
    }

    #[test]
    fn greedy_output_has_no_blanks(t in 1usize..30, v in 2usize..8, seed in any::<u64>()) {
        let mut s = seed | 1;
        let data: Vec<f64> = (0..t * v).map(|_| { s = s.wrapping_mul(6364136223846793005).wrapping_add(1); (s >> 40) as f64 }).collect();
        let labels = greedy_decode(&Tensor::new(&[t, v], data).unwrap());
        prop_assert!(labels.len() <= t);
        prop_assert!(labels.iter().all(|&l| l != BLANK && l < v));
    }

    #[test]
    fn normalize_is_idempotent_and_centred(t in 2usize..50, seed in any::<u64>()) {
        let f = FeatureMatrix::new(matrix(t, seed)).unwrap();
        let once = normalize(&f);
        let twice = normalize(&once);
        for (a, b) in once.frames().data().iter().zip(twice.frames().data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for d in 0..FEATURE_DIM {
            let mean: f64 = once.frames().data().iter().skip(d).step_by(FEATURE_DIM).sum::<f64>() / t as f64;
            prop_assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn masking_only_touches_masked_cells(t in 1usize..120, seed in any::<u64>()) {
        let f = FeatureMatrix::new(matrix(t, seed)).unwrap();
        let (masked, spans) = mask_augment(&f, seed);
        let (again, _) = mask_augment(&f, seed);
        prop_assert_eq!(&masked, &again);
        for r in 0..t {
            for c in 0..FEATURE_DIM {
                let covered = spans.iter().any(|s| {
                    let i = if s.axis_freq { c } else { r };
                    i >= s.start && i < s.start + s.width
                });
                let (a, b) = (f.frames().data()[r * FEATURE_DIM + c], masked.frames().data()[r * FEATURE_DIM + c]);
                if !covered {
                    prop_assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn checkpoint_resave_is_byte_identical(policy in policy(), seed in 0u64..50) {
        let mut config = EncoderConfig::toy(4);
        config.policy = policy;
        config.layer.attn_dim = 8;
        config.layer.heads = 2;
        config.layer.ffn_dim = 8;
        config.frontend_channels = 2;
        config.downsample_dim = 8;
        let encoder = Encoder::build(&config, seed).unwrap();
        let bytes = encoder.to_checkpoint();
        let back = Encoder::<f64>::from_checkpoint(&bytes).unwrap();
        prop_assert_eq!(back.to_checkpoint(), bytes);
        let narrow = encoder.cast::<f32>().to_checkpoint();
        prop_assert_eq!(Encoder::<f32>::from_checkpoint(&narrow).unwrap().to_checkpoint(), narrow);
    }
}
