//! Toy-scale training: Adam with decoupled weight decay, linear warmup then
//! inverse-square-root decay, length-sorted frame-budget batching.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ctc::{combined_loss, ctc_loss, feasible, greedy_decode, CtcTargets};
use crate::features::{mask_augment, FeatureMatrix};
use crate::layers::Ctx;
use crate::model::{Encoder, EncoderConfig, SequenceBatch};
use crate::numerics::{ParamSet, Tape, Tensor};
use crate::reduction::stage_lengths;
use crate::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: each step multiplies parameters by `1 − lr·weight_decay`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay: 1e-6,
        }
    }
}

/// First and second moments of every parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: Vec<Tensor<f64>>,
    pub second: Vec<Tensor<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet<f64>) -> Self {
        let zeros: Vec<Tensor<f64>> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }
}

/// One Adam update from the accumulated gradients.
pub fn adam_step(params: &mut ParamSet<f64>, state: &mut OptimizerState, lr: f64, cfg: &AdamConfig) {
    state.step += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let p = params.by_index(i);
        let mut value = p.value.as_ref().clone();
        let decay = 1.0 - lr * cfg.weight_decay;
        match p.grad() {
            Some(grad) => {
                let m = state.first[i].data_mut();
                let v = state.second[i].data_mut();
                for (j, x) in value.data_mut().iter_mut().enumerate() {
                    let g = grad.data()[j];
                    m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                    v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                    let update = (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
                    *x = *x * decay - lr * update;
                }
            }
            None => {
                let m = state.first[i].data_mut();
                let v = state.second[i].data_mut();
                for (j, x) in value.data_mut().iter_mut().enumerate() {
                    m[j] *= cfg.beta1;
                    v[j] *= cfg.beta2;
                    let update = (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
                    *x = *x * decay - lr * update;
                }
            }
        }
        params.set_value(i, value).expect("shape unchanged");
    }
}

/// Linear warmup to `peak_lr`, then `peak_lr·sqrt(warmup/step)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps == 0 || self.warmup_steps > self.total_steps.max(1) {
            return Err(Error::Config(alloc::format!(
                "warmup_steps {} must be in 1..={}",
                self.warmup_steps,
                self.total_steps.max(1)
            )));
        }
        if self.peak_lr.is_nan() || self.peak_lr <= 0.0 {
            return Err(Error::Config(alloc::format!(
                "peak_lr {} must be positive",
                self.peak_lr
            )));
        }
        Ok(())
    }
}

/// Learning rate at 1-based `step`.
pub fn lr_at(step: u64, schedule: &ScheduleConfig) -> f64 {
    let step = step.max(1) as f64;
    let warmup = schedule.warmup_steps as f64;
    if step <= warmup {
        schedule.peak_lr * step / warmup
    } else {
        schedule.peak_lr * (warmup / step).sqrt()
    }
}

/// One training utterance: `[T, 80]` features and label indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub features: Tensor<f64>,
    pub labels: Vec<usize>,
}

/// Loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
    /// Upper bound on padded frames per batch (one utterance always fits).
    pub frame_budget: usize,
    /// Batches whose gradients are summed before each update.
    pub grad_accum: usize,
    /// Frequency/time masking on every presentation of an utterance.
    pub augment: bool,
}

impl TrainConfig {
    /// Toy defaults: peak 2e-3 reached after a tenth of the run.
    pub fn toy(steps: u64, seed: u64) -> Self {
        Self {
            steps,
            seed,
            schedule: ScheduleConfig {
                peak_lr: 2e-3,
                warmup_steps: (steps / 10).max(1),
                total_steps: steps.max(1),
            },
            adam: AdamConfig::default(),
            frame_budget: 2000,
            grad_accum: 1,
            augment: false,
        }
    }
}

/// One optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: Encoder<f64>,
    pub trace: Vec<StepRecord>,
    /// Indices of utterances dropped as CTC-infeasible.
    pub dropped: Vec<usize>,
}

/// Output frames of an utterance of `frames` input frames.
pub fn output_frames(config: &EncoderConfig, frames: usize) -> Result<usize> {
    Ok(*stage_lengths(&config.policy, frames)?.last().expect("non-empty"))
}

/// Length-sorted batches within the frame budget, as indices into `lengths`.
pub fn make_batches(lengths: &[usize], frame_budget: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for i in order {
        let longest = current.iter().map(|&j| lengths[j]).max().unwrap_or(0).max(lengths[i]);
        if !current.is_empty() && longest * (current.len() + 1) > frame_budget {
            batches.push(core::mem::take(&mut current));
        }
        current.push(i);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Mean combined CTC loss of one batch recorded on `tape`.
fn batch_loss(
    encoder: &Encoder<f64>,
    tape: &mut Tape<f64>,
    rng: &mut ChaCha8Rng,
    features: &[Tensor<f64>],
    targets: &[CtcTargets],
) -> Result<crate::numerics::Var<f64>> {
    let batch = SequenceBatch::from_utterances(features, 0)?;
    let lambda = encoder.config().lambda;
    let outputs = {
        let mut ctx = Ctx::training(tape, encoder.params(), rng);
        encoder.forward_batch(&mut ctx, &batch, &mut ())?
    };
    let mut total = None;
    for (out, target) in outputs.iter().zip(targets) {
        let final_loss = ctc_loss(tape, &out.final_logits, out.valid, target)?;
        let inter = out
            .intermediate
            .iter()
            .map(|l| ctc_loss(tape, l, out.valid, target))
            .collect::<Result<Vec<_>>>()?;
        let loss = combined_loss(tape, &final_loss, &inter, lambda)?;
        total = Some(match total {
            None => loss,
            Some(acc) => tape.add(&acc, &loss)?,
        });
    }
    let total = total.expect("non-empty batch");
    Ok(tape.scale(&total, 1.0 / outputs.len() as f64))
}

/// Trains a freshly built encoder on `data`. Infeasible utterances are
/// dropped and reported; the run is deterministic given `train.seed`.
pub fn train_toy(config: &EncoderConfig, data: &[Utterance], train: &TrainConfig) -> Result<TrainOutcome> {
    let encoder = Encoder::build(config, train.seed)?;
    train_encoder(encoder, data, train)
}

/// Same as [`train_toy`] starting from an existing encoder.
pub fn train_encoder(mut encoder: Encoder<f64>, data: &[Utterance], train: &TrainConfig) -> Result<TrainOutcome> {
    train.schedule.validate()?;
    let config = encoder.config().clone();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, u) in data.iter().enumerate() {
        let targets = CtcTargets::new(u.labels.clone(), config.vocab_size)?;
        if feasible(output_frames(&config, u.features.rows())?, &targets) {
            kept.push((u, targets));
        } else {
            dropped.push(i);
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyDataset { dropped: dropped.len() });
    }
    let lengths: Vec<usize> = kept.iter().map(|(u, _)| u.features.rows()).collect();
    let batches = make_batches(&lengths, train.frame_budget);

    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut state = OptimizerState::new(encoder.params());
    let mut order: Vec<usize> = Vec::new();
    let mut trace = Vec::with_capacity(train.steps as usize);
    let mut presentation: u64 = 0;
    let accum = train.grad_accum.max(1);

    for step in 1..=train.steps {
        encoder.params_mut().zero_grad();
        let mut step_loss = 0.0;
        for _ in 0..accum {
            if order.is_empty() {
                order = (0..batches.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            let b = order.pop().expect("refilled above");
            let mut feats = Vec::with_capacity(batches[b].len());
            let mut targets = Vec::with_capacity(batches[b].len());
            for &i in &batches[b] {
                let (u, t) = &kept[i];
                presentation += 1;
                let f = if train.augment {
                    let seed = train.seed ^ presentation.wrapping_mul(0x9e37_79b9_7f4a_7c15);
                    mask_augment(&FeatureMatrix::new(u.features.clone())?, seed)
                        .0
                        .into_tensor()
                } else {
                    u.features.clone()
                };
                feats.push(f);
                targets.push(t.clone());
            }
            let mut tape = Tape::new();
            let loss = batch_loss(&encoder, &mut tape, &mut rng, &feats, &targets)?;
            step_loss += loss.value().item();
            let grads = tape.backward(&loss)?;
            encoder.params_mut().accumulate(&grads);
        }
        if accum > 1 {
            scale_grads(encoder.params_mut(), 1.0 / accum as f64);
        }
        let lr = lr_at(step, &train.schedule);
        adam_step(encoder.params_mut(), &mut state, lr, &train.adam);
        trace.push(StepRecord {
            step,
            lr,
            loss: step_loss / accum as f64,
        });
    }
    Ok(TrainOutcome {
        encoder,
        trace,
        dropped,
    })
}

fn scale_grads(params: &mut ParamSet<f64>, factor: f64) {
    for i in 0..params.len() {
        params.by_index_mut(i).scale_grad(factor);
    }
}

/// Greedy transcripts of every utterance.
pub fn greedy_transcripts(encoder: &Encoder<f64>, data: &[Utterance]) -> Result<Vec<Vec<usize>>> {
    data.iter()
        .map(|u| {
            let logits = encoder.logits(&u.features)?;
            Ok(greedy_decode(&logits))
        })
        .collect()
}

/// Utterances whose greedy transcript equals the reference.
pub fn exact_matches(encoder: &Encoder<f64>, data: &[Utterance]) -> Result<usize> {
    Ok(greedy_transcripts(encoder, data)?
        .iter()
        .zip(data)
        .filter(|(hyp, u)| **hyp == u.labels)
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn schedule() -> ScheduleConfig {
        ScheduleConfig {
            peak_lr: 2e-3,
            warmup_steps: 100,
            total_steps: 1000,
        }
    }

    #[test]
    fn schedule_points() {
        let s = schedule();
        assert_eq!(lr_at(100, &s), 2e-3);
        assert!((lr_at(400, &s) - 1e-3).abs() < 1e-18);
        assert!((lr_at(1, &s) - 2e-5).abs() < 1e-18);
    }

    fn one_param(value: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.register("w".into(), Tensor::full(&[1], value)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = one_param(2.0);
        let mut state = OptimizerState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &mut state, 0.1, &cfg);
        assert_eq!(p.by_index(0).value.item(), 2.0 * (1.0 - 0.1 * 1e-6));
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..cfg
        };
        adam_step(&mut p, &mut state, 0.1, &cfg);
        assert_eq!(p.by_index(0).value.item(), 2.0 * (1.0 - 0.1 * 1e-6));
    }

    #[test]
    fn step_opposes_gradient() {
        for g in [3.0, -0.5] {
            let mut p = one_param(1.0);
            let mut state = OptimizerState::new(&p);
            let mut tape = Tape::new();
            let w = p.var(&mut tape, crate::numerics::ParamId(0));
            let scaled = tape.scale(&w, g);
            let loss = tape.sum(&scaled);
            p.accumulate(&tape.backward(&loss).unwrap());
            adam_step(&mut p, &mut state, 0.01, &AdamConfig::default());
            let moved = p.by_index(0).value.item() - 1.0;
            assert!(moved * g < 0.0, "g={g} moved={moved}");
        }
    }

    #[test]
    fn batches_respect_budget_and_sort() {
        let lengths = [50, 10, 30, 20, 40];
        let batches = make_batches(&lengths, 60);
        assert_eq!(batches, [vec![1, 3], vec![2], vec![4], vec![0]]);
        assert_eq!(make_batches(&[500], 60), [vec![0]]);
    }
}
