use uconv_core::checks::{convergence_corpus, convergence_suite, CONVERGENCE_STEPS, CONVERGENCE_VOCAB};
use uconv_core::model::EncoderConfig;
use uconv_core::trainer::{train_toy, TrainConfig};

#[test]
fn toy_model_memorizes_corpus_with_and_without_intermediate_ctc() {
    let outcomes = convergence_suite(42, CONVERGENCE_STEPS).unwrap();
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "ok  " } else { "FAIL" }, o.name, o.detail);
    }
    assert!(outcomes.iter().all(|o| o.passed));
}

#[test]
fn same_seed_replays_bit_identically() {
    let data = convergence_corpus(5).unwrap();
    let mut config = EncoderConfig::toy(CONVERGENCE_VOCAB);
    config.intermediate_ctc = true;
    let mut train = TrainConfig::toy(12, 5);
    train.augment = true;
    let a = train_toy(&config, &data, &train).unwrap();
    let b = train_toy(&config, &data, &train).unwrap();
    let bits = |t: &[uconv_core::trainer::StepRecord]| t.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.trace), bits(&b.trace));
    assert_eq!(a.encoder.to_checkpoint(), b.encoder.to_checkpoint());
}

#[test]
fn zero_steps_leave_initialization_untouched() {
    let data = convergence_corpus(1).unwrap();
    let config = EncoderConfig::toy(CONVERGENCE_VOCAB);
    let run = train_toy(&config, &data, &TrainConfig::toy(0, 3)).unwrap();
    let fresh = uconv_core::model::Encoder::build(&config, 3).unwrap();
    assert!(run.trace.is_empty());
    assert_eq!(run.encoder.to_checkpoint(), fresh.to_checkpoint());
}
