use alloc::format;
use alloc::vec::Vec;

use super::EncoderConfig;
use crate::features::FEATURE_DIM;
use crate::layers::{sinusoid_table, ConformerBlock, Ctx, Init, Linear, PosEncoding};
use crate::numerics::{ParamSet, Real, Tape, Tensor, Var};
use crate::reduction::{
    frontend_len, halve, lookup_skip, record_skip, skip_combine, upsample_x2, DownsampleX2, FrontendX4, StagePlan,
    Transition,
};
use crate::{Error, Result};

/// Padded `[B, T, 80]` features with per-utterance valid lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch<T> {
    features: Tensor<T>,
    lengths: Vec<usize>,
}

impl<T: Real> SequenceBatch<T> {
    pub fn new(features: Tensor<T>, lengths: Vec<usize>) -> Result<Self> {
        let shape = features.shape();
        if shape.len() != 3 || shape[2] != FEATURE_DIM || shape[0] != lengths.len() {
            return Err(Error::InvalidShape {
                op: "sequence_batch",
                reason: format!("expected [{}, T, {FEATURE_DIM}], got {shape:?}", lengths.len()),
            });
        }
        if let Some(&l) = lengths.iter().find(|&&l| l > shape[1]) {
            return Err(Error::InvalidShape {
                op: "sequence_batch",
                reason: format!("valid length {l} exceeds padded length {}", shape[1]),
            });
        }
        Ok(Self { features, lengths })
    }

    /// Zero-pads `[T_i, 80]` utterances to the longest (or `min_len`).
    pub fn from_utterances(utterances: &[Tensor<T>], min_len: usize) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::InvalidShape {
                op: "sequence_batch",
                reason: "empty batch".into(),
            });
        }
        let mut lengths = Vec::with_capacity(utterances.len());
        for u in utterances {
            if u.rank() != 2 || u.shape()[1] != FEATURE_DIM {
                return Err(Error::InvalidShape {
                    op: "sequence_batch",
                    reason: format!("utterance shape {:?} is not [T, {FEATURE_DIM}]", u.shape()),
                });
            }
            lengths.push(u.rows());
        }
        let padded = lengths.iter().copied().max().unwrap_or(0).max(min_len).max(1);
        let mut data = Vec::with_capacity(utterances.len() * padded * FEATURE_DIM);
        for u in utterances {
            data.extend_from_slice(u.data());
            data.resize(data.len() + (padded - u.rows()) * FEATURE_DIM, T::zero());
        }
        Self::new(Tensor::new(&[utterances.len(), padded, FEATURE_DIM], data)?, lengths)
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn padded_len(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Padded `[T, 80]` slice of utterance `i`.
    pub fn utterance(&self, i: usize) -> Tensor<T> {
        let step = self.padded_len() * FEATURE_DIM;
        Tensor::new(
            &[self.padded_len(), FEATURE_DIM],
            self.features.data()[i * step..(i + 1) * step].to_vec(),
        )
        .expect("slice of a valid batch")
    }
}

/// Section of the forward pass announced to a [`StageObserver`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Frontend,
    /// Downsampling or upsampling + skip entering stage `i`.
    Transition(usize),
    /// Conformer layers of stage `i`.
    Stage(usize),
    /// Output projection and intermediate heads.
    Output,
}

/// Receives a call at the start of every section and once at the end.
pub trait StageObserver {
    fn begin(&mut self, section: Section);
    fn end(&mut self) {}
}

impl StageObserver for () {
    fn begin(&mut self, _: Section) {}
}

#[derive(Debug, Clone)]
enum Entry {
    Start,
    Down(DownsampleX2),
    Up,
}

#[derive(Debug, Clone)]
struct StageModules {
    level: usize,
    entry: Entry,
    blocks: Vec<ConformerBlock>,
}

/// Logits of one utterance.
#[derive(Debug, Clone)]
pub struct UtteranceLogits<T> {
    /// `[T_out, vocab]` over the padded output length.
    pub final_logits: Var<T>,
    /// One per non-final stage, aligned to the final level; empty unless
    /// intermediate CTC is enabled.
    pub intermediate: Vec<Var<T>>,
    /// Valid output frames.
    pub valid: usize,
}

/// Untaped logits of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T> {
    pub final_logits: Vec<Tensor<T>>,
    pub intermediate: Vec<Vec<Tensor<T>>>,
    pub lengths: Vec<usize>,
}

/// A built encoder: frontend, Conformer stages with their transitions, and
/// the output projection shared by all CTC heads.
#[derive(Debug, Clone)]
pub struct Encoder<T> {
    config: EncoderConfig,
    params: ParamSet<T>,
    frontend: FrontendX4,
    stages: Vec<StageModules>,
    output: Linear,
}

impl Encoder<f64> {
    /// Deterministic initialization from `seed`.
    pub fn build(config: &EncoderConfig, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let modules = Self::assemble(config, &mut Init::new(&mut params, seed))?;
        Ok(modules.with_params(params))
    }

    /// Same structure with every parameter zero.
    pub fn build_zeroed(config: &EncoderConfig) -> Result<Self> {
        let mut params = ParamSet::new();
        let modules = Self::assemble(config, &mut Init::zeroed(&mut params))?;
        Ok(modules.with_params(params))
    }

    fn assemble(config: &EncoderConfig, init: &mut Init<'_>) -> Result<Modules> {
        config.validate()?;
        let d = config.layer.attn_dim;
        let frontend = FrontendX4::new(init, "frontend", config.frontend_channels, d)?;
        let policy = &config.policy;
        let mut stages = Vec::with_capacity(policy.num_stages());
        for (i, (&level, &layers)) in policy.levels().iter().zip(policy.layers()).enumerate() {
            let entry = if i == 0 {
                Entry::Start
            } else {
                match policy.transition(i) {
                    Transition::Down => Entry::Down(DownsampleX2::new(
                        init,
                        &format!("stage{i}.down"),
                        d,
                        config.downsample_dim,
                    )?),
                    Transition::Up => Entry::Up,
                }
            };
            let blocks = (0..layers)
                .map(|j| ConformerBlock::new(init, &format!("stage{i}.layer{j}"), &config.layer))
                .collect::<Result<Vec<_>>>()?;
            stages.push(StageModules { level, entry, blocks });
        }
        let output = Linear::new(init, "output", d, config.vocab_size, true)?;
        Ok(Modules {
            config: config.clone(),
            frontend,
            stages,
            output,
        })
    }
}

/// Module structure without parameter values.
#[derive(Debug, Clone)]
pub(crate) struct Modules {
    config: EncoderConfig,
    frontend: FrontendX4,
    stages: Vec<StageModules>,
    output: Linear,
}

impl Modules {
    pub(crate) fn with_params<T>(self, params: ParamSet<T>) -> Encoder<T> {
        Encoder {
            config: self.config,
            params,
            frontend: self.frontend,
            stages: self.stages,
            output: self.output,
        }
    }
}

impl<T: Real> Encoder<T> {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Exact number of scalar parameters.
    pub fn count_params(&self) -> usize {
        self.params.numel()
    }

    /// Same structure with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Encoder<U> {
        self.with_params(self.params.cast())
    }

    /// Scalar parameters of each Downsampling x2 block, in stage order.
    pub fn downsample_param_counts(&self) -> Vec<usize> {
        self.stages
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s.entry, Entry::Down(_)))
            .map(|(i, _)| {
                let prefix = format!("stage{i}.down.");
                self.params
                    .iter()
                    .filter(|p| p.name.starts_with(&prefix))
                    .map(|p| p.value.numel())
                    .sum()
            })
            .collect()
    }

    /// One utterance `[T, 80]` whose first `valid` frames are real.
    pub fn forward_utterance(
        &self,
        ctx: &mut Ctx<'_, T>,
        feats: &Var<T>,
        valid: usize,
        observer: &mut dyn StageObserver,
    ) -> Result<UtteranceLogits<T>> {
        if valid == 0 || valid > feats.rows() {
            return Err(Error::DegenerateInput { utterance: 0, stage: 0 });
        }
        let plan = StagePlan::new(&self.config.policy, feats.rows())?;
        observer.begin(Section::Frontend);
        let mut x = self.frontend.forward(ctx, feats, valid)?;
        let mut v = frontend_len(valid);
        if self.config.layer.pos_enc == PosEncoding::Absolute {
            let table = sinusoid_table((0..x.rows()).map(|p| p as f64), self.config.layer.attn_dim);
            let table = ctx.tape.constant(table);
            x = ctx.tape.add(&x, &table)?;
        }

        let mut skips: Vec<(usize, (Var<T>, usize))> = Vec::new();
        let mut outputs: Vec<(usize, Var<T>)> = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            match &stage.entry {
                Entry::Start => {}
                Entry::Down(block) => {
                    observer.begin(Section::Transition(i));
                    record_skip(&mut skips, self.stages[i - 1].level, (x.clone(), v));
                    x = block.forward(ctx, &x, v)?;
                    v = halve(v);
                }
                Entry::Up => {
                    observer.begin(Section::Transition(i));
                    let (skip, skip_valid) = lookup_skip(&skips, stage.level)?;
                    let up = upsample_x2(ctx.tape, &x);
                    x = skip_combine(ctx.tape, &up, &skip)?;
                    v = skip_valid;
                }
            }
            debug_assert_eq!(x.rows(), plan.stages[i].len);
            observer.begin(Section::Stage(i));
            for block in &stage.blocks {
                x = block.forward(ctx, &x, v)?;
            }
            outputs.push((stage.level, x.clone()));
        }

        observer.begin(Section::Output);
        let final_level = self.config.policy.final_reduction();
        let out_len = x.rows();
        let final_logits = self.output.forward(ctx, &x)?;
        let mut intermediate = Vec::new();
        if self.config.intermediate_ctc {
            for (level, h) in &outputs[..outputs.len() - 1] {
                let aligned = align_for_interctc(ctx.tape, h, *level, final_level, out_len)?;
                intermediate.push(self.output.forward(ctx, &aligned)?);
            }
        }
        observer.end();
        Ok(UtteranceLogits {
            final_logits,
            intermediate,
            valid: v,
        })
    }

    /// Every utterance of a padded batch through the same context.
    pub fn forward_batch(
        &self,
        ctx: &mut Ctx<'_, T>,
        batch: &SequenceBatch<T>,
        observer: &mut dyn StageObserver,
    ) -> Result<Vec<UtteranceLogits<T>>> {
        if let Some(i) = batch.lengths().iter().position(|&l| l == 0) {
            return Err(Error::DegenerateInput { utterance: i, stage: 0 });
        }
        (0..batch.len())
            .map(|i| {
                let feats = ctx.tape.constant(batch.utterance(i));
                self.forward_utterance(ctx, &feats, batch.lengths()[i], observer)
                    .map_err(|e| match e {
                        Error::DegenerateInput { stage, .. } => Error::DegenerateInput { utterance: i, stage },
                        other => other,
                    })
            })
            .collect()
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, batch: &SequenceBatch<T>) -> Result<EncoderOutput<T>> {
        self.forward_observed(batch, &mut ())
    }

    pub fn forward_observed(
        &self,
        batch: &SequenceBatch<T>,
        observer: &mut dyn StageObserver,
    ) -> Result<EncoderOutput<T>> {
        let mut tape = Tape::inference();
        let mut ctx = Ctx::inference(&mut tape, &self.params);
        let outs = self.forward_batch(&mut ctx, batch, observer)?;
        let mut out = EncoderOutput {
            final_logits: Vec::with_capacity(outs.len()),
            intermediate: Vec::with_capacity(outs.len()),
            lengths: Vec::with_capacity(outs.len()),
        };
        for u in outs {
            out.final_logits.push(u.final_logits.to_tensor());
            out.intermediate
                .push(u.intermediate.iter().map(Var::to_tensor).collect());
            out.lengths.push(u.valid);
        }
        Ok(out)
    }

    /// Convenience for a single unpadded `[T, 80]` utterance.
    pub fn logits(&self, feats: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = SequenceBatch::from_utterances(core::slice::from_ref(feats), 0)?;
        let mut out = self.forward(&batch)?;
        Ok(out.final_logits.swap_remove(0))
    }

    /// Module structure with another parameter set of identical layout.
    pub(crate) fn with_params<U>(&self, params: ParamSet<U>) -> Encoder<U> {
        Encoder {
            config: self.config.clone(),
            params,
            frontend: self.frontend.clone(),
            stages: self.stages.clone(),
            output: self.output.clone(),
        }
    }
}

/// Brings a stage output at `stage_level` to `final_level` with
/// `target_len` frames: nearest-neighbour doubling (then truncation) when the
/// stage is coarser, every-second-frame decimation when it is finer.
pub fn align_for_interctc<T: Real>(
    tape: &mut Tape<T>,
    x: &Var<T>,
    stage_level: usize,
    final_level: usize,
    target_len: usize,
) -> Result<Var<T>> {
    if !stage_level.is_power_of_two() || !final_level.is_power_of_two() {
        return Err(Error::Config(format!(
            "levels x{stage_level} and x{final_level} must be powers of two"
        )));
    }
    let mut level = stage_level;
    let mut y = x.clone();
    while level > final_level {
        y = tape.upsample_rows_x2(&y);
        level /= 2;
    }
    while level < final_level {
        y = tape.decimate_rows_x2(&y);
        level *= 2;
    }
    if y.rows() < target_len {
        return Err(Error::Alignment {
            upsampled: y.rows(),
            skip: target_len,
        });
    }
    if y.rows() > target_len {
        y = tape.narrow_rows(&y, 0, target_len)?;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduction::ReductionPolicy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feats(rows: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(&[rows, FEATURE_DIM], data).unwrap()
    }

    fn toy(levels: &str, layers: &str, interctc: bool) -> Encoder<f64> {
        let mut cfg = EncoderConfig::toy(11);
        cfg.policy = ReductionPolicy::parse(levels, Some(layers)).unwrap();
        cfg.intermediate_ctc = interctc;
        Encoder::build(&cfg, 3).unwrap()
    }

    #[test]
    fn count_matches_closed_form() {
        for (levels, layers) in [("x4", "2"), ("x4-x8-x16-x8", "1-1-1-1"), ("x4-x8-x4", "1-0-1")] {
            let enc = toy(levels, layers, false);
            assert_eq!(enc.count_params(), enc.config().closed_form_params(), "{levels}");
        }
    }

    #[test]
    fn output_lengths_follow_policy() {
        let enc = toy("x4-x8-x16-x8", "1-1-1-1", true);
        let batch = SequenceBatch::from_utterances(&[feats(61, 1), feats(40, 2)], 0).unwrap();
        let out = enc.forward(&batch).unwrap();
        // 61 → 31 → 16 → 8 → 4 → 8 at x8.
        assert_eq!(out.final_logits[0].shape(), &[8, 11]);
        assert_eq!(out.lengths, [8, 5]);
        assert_eq!(out.intermediate[0].len(), 3);
        for t in &out.intermediate[0] {
            assert_eq!(t.shape(), out.final_logits[0].shape());
        }
    }

    #[test]
    fn padding_does_not_change_valid_logits() {
        let enc = toy("x4-x8-x16-x8", "1-1-1-1", true);
        let x = feats(37, 5);
        let a = enc
            .forward(&SequenceBatch::from_utterances(core::slice::from_ref(&x), 0).unwrap())
            .unwrap();
        let b = enc
            .forward(&SequenceBatch::from_utterances(&[x], 37 + 29).unwrap())
            .unwrap();
        let valid = a.lengths[0];
        assert_eq!(valid, b.lengths[0]);
        let fa = a.final_logits[0].narrow_rows(0, valid).unwrap();
        let fb = b.final_logits[0].narrow_rows(0, valid).unwrap();
        assert!(fa.max_abs_diff(&fb) < 1e-9, "{}", fa.max_abs_diff(&fb));
    }

    #[test]
    fn zero_length_utterance_is_named() {
        let enc = toy("x4", "1", false);
        let batch = SequenceBatch::new(Tensor::zeros(&[2, 8, FEATURE_DIM]), alloc::vec![8, 0]).unwrap();
        assert_eq!(
            enc.forward(&batch).unwrap_err(),
            Error::DegenerateInput { utterance: 1, stage: 0 }
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let enc = toy("x4-x8-x16-x8", "1-1-1-1", false);
        let bytes = enc.to_checkpoint();
        let back = Encoder::<f64>::from_checkpoint(&bytes).unwrap();
        assert_eq!(back.to_checkpoint(), bytes);
        let x = feats(30, 9);
        assert_eq!(enc.logits(&x).unwrap(), back.logits(&x).unwrap());

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(Encoder::<f64>::from_checkpoint(&bad).unwrap_err(), Error::BadMagic);
        assert!(matches!(
            Encoder::<f64>::from_checkpoint(&bytes[..bytes.len() / 2]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn align_rules() {
        let mut tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::from_f64(&[3, 1], &[1.0, 2.0, 3.0]).unwrap());
        let up = align_for_interctc(&mut tape, &x, 16, 8, 5).unwrap();
        assert_eq!(up.value().data(), &[1.0, 1.0, 2.0, 2.0, 3.0]);
        let down = align_for_interctc(&mut tape, &x, 4, 8, 2).unwrap();
        assert_eq!(down.value().data(), &[1.0, 3.0]);
        let same = align_for_interctc(&mut tape, &x, 8, 8, 3).unwrap();
        assert_eq!(same.value().data(), &[1.0, 2.0, 3.0]);
    }
}
