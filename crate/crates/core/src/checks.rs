//! Property suites shared by the test targets and the `check` command. Each
//! suite returns one outcome per property.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctc::oracle::{brute_force_loss, most_probable_labelling};
use crate::ctc::{beam_search, ctc_loss, ctc_loss_and_grad, feasible, CtcTargets, BLANK};
use crate::features::FEATURE_DIM;
use crate::layers::{
    ConformerBlock, ConformerLayerConfig, ConvModule, Ctx, FeedForward, Init, PosEncoding, SelfAttention,
};
use crate::model::{Encoder, EncoderConfig};
use crate::numerics::gradcheck::{max_relative_error, max_relative_error_params};
use crate::numerics::{ParamSet, Tape, Tensor, Var};
use crate::reduction::{stage_lengths, DownsampleX2, FrontendX4, ReductionPolicy};
use crate::synth::corpus;
use crate::trainer::{exact_matches, lr_at, train_toy, TrainConfig, Utterance};
use crate::Result;

/// Result of one property.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

/// Published parameter targets in millions, with the tolerance applied to each.
pub const PARAM_TARGETS: &[(&str, f64)] = &[
    ("conformer-s", 21.8),
    ("conv-conformer-v1", 23.2),
    ("conv-conformer-v2", 23.2),
    ("uconv-d8-f4", 23.2),
    ("uconv-d16-f4", 24.6),
    ("uconv-d16-f8-v1", 24.6),
    ("uconv-d16-f8-v2", 24.6),
    ("uconv-d32-f8", 26.0),
    ("conformer-l", 83.0),
    ("uconv-l-d16-f8-v1", 87.3),
];
pub const PARAM_TOLERANCE: f64 = 0.05;
/// "about 1.4M parameters" per Downsampling x2 block of the small-width
/// models; the large-width blocks are not held to it.
pub const DOWNSAMPLE_TARGET: f64 = 1.4e6;
pub const DOWNSAMPLE_TOLERANCE: f64 = 0.10;

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol * target
}

/// Builds every preset and compares its exact count with its target.
pub fn params_suite() -> Result<Vec<Outcome>> {
    let mut out = Vec::new();
    for &(name, millions) in PARAM_TARGETS {
        let config = EncoderConfig::preset(name)?;
        let encoder = Encoder::build(&config, config.seed)?;
        let count = encoder.count_params();
        let closed = config.closed_form_params();
        let target = millions * 1e6;
        out.push(Outcome::new(
            format!("params {name}"),
            count == closed && within(count as f64, target, PARAM_TOLERANCE),
            format!(
                "{count} (closed form {closed}) vs {millions} M, {:+.2}%",
                100.0 * (count as f64 - target) / target
            ),
        ));
        let small_width = config.layer.attn_dim == EncoderConfig::small(config.policy.clone()).layer.attn_dim;
        if !small_width {
            continue;
        }
        for (i, n) in encoder.downsample_param_counts().into_iter().enumerate() {
            out.push(Outcome::new(
                format!("downsample block {i} of {name}"),
                within(n as f64, DOWNSAMPLE_TARGET, DOWNSAMPLE_TOLERANCE),
                format!(
                    "{n} vs 1.4 M, {:+.2}%",
                    100.0 * (n as f64 - DOWNSAMPLE_TARGET) / DOWNSAMPLE_TARGET
                ),
            ));
        }
    }
    Ok(out)
}

/// Stage-length tables at 2998 frames plus the final-length bound over
/// `samples` random lengths in `[16, 6000]`.
pub fn lengths_suite(seed: u64, samples: usize) -> Result<Vec<Outcome>> {
    let tables: [(&str, &str, &[usize]); 4] = [
        ("x4", "12", &[750]),
        ("x4-x8", "4-8", &[750, 375]),
        ("x4-x8-x16-x8", "3-3-3-3", &[750, 375, 188, 375]),
        ("x4-x8-x16-x32-x16-x8", "2-2-2-2-2-2", &[750, 375, 188, 94, 188, 375]),
    ];
    let mut out = Vec::new();
    for (levels, layers, expected) in tables {
        let policy = ReductionPolicy::parse(levels, Some(layers))?;
        let got = stage_lengths(&policy, 2998)?;
        out.push(Outcome::new(
            format!("stage lengths {levels} at 2998"),
            got == expected,
            format!("{got:?}"),
        ));
    }
    let policies = [
        "x4",
        "x4-x8",
        "x4-x8-x4",
        "x4-x8-x16-x8",
        "x4-x8-x16-x8-x4",
        "x4-x8-x16-x32-x16-x8",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for levels in policies {
        let policy = ReductionPolicy::parse(levels, None)?;
        let f = policy.final_reduction() as f64;
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let t = rng.random_range(16..=6000usize);
            let lens = stage_lengths(&policy, t)?;
            let out_len = *lens.last().expect("non-empty") as f64;
            worst = worst.max((out_len - t as f64 / f).abs());
        }
        out.push(Outcome::new(
            format!("final length of {levels} within 2 of T/F"),
            worst <= 2.0,
            format!("max deviation {worst:.3} over {samples} lengths"),
        ));
    }
    Ok(out)
}

fn random_logits(rng: &mut ChaCha8Rng, t: usize, v: usize) -> Tensor<f64> {
    let data = (0..t * v).map(|_| rng.random_range(-3.0..3.0)).collect();
    Tensor::new(&[t, v], data).expect("positive extents")
}

/// CTC loss against path enumeration and beam top-1 against the exact most
/// probable labelling.
pub fn oracle_suite(seed: u64, loss_instances: usize, beam_instances: usize, beam: usize) -> Result<Vec<Outcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < loss_instances {
        let t = rng.random_range(1..=8);
        let v = rng.random_range(2..=4);
        let n = rng.random_range(0..=3);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(1..v)).collect();
        let targets = CtcTargets::new(labels.clone(), v)?;
        if !feasible(t, &targets) {
            continue;
        }
        let logits = random_logits(&mut rng, t, v);
        let (loss, _) = ctc_loss_and_grad(&logits, t, &targets)?;
        worst = worst.max((loss - brute_force_loss(&logits, &labels)).abs());
        done += 1;
    }
    let mut out = vec![Outcome::new(
        "ctc loss vs enumeration",
        worst < 1e-9,
        format!("max |diff| {worst:.3e} over {loss_instances} instances"),
    )];

    let mut misses = Vec::new();
    for i in 0..beam_instances {
        let t = rng.random_range(1..=6);
        let v = rng.random_range(2..=4);
        let logits = random_logits(&mut rng, t, v);
        if beam_search(&logits, beam)[0].labels != most_probable_labelling(&logits).0 {
            misses.push(i);
        }
    }
    out.push(Outcome::new(
        format!("beam {beam} top-1 vs exact labelling"),
        misses.is_empty(),
        format!("{} of {beam_instances} differ {misses:?}", misses.len()),
    ));
    Ok(out)
}

/// Whether the forward recursion can reach a final state, by boolean
/// reachability over the blank-extended sequence.
fn reachable(frames: usize, labels: &[usize]) -> bool {
    let ext: Vec<usize> = core::iter::once(BLANK)
        .chain(labels.iter().flat_map(|&l| [l, BLANK]))
        .collect();
    let s = ext.len();
    if frames == 0 {
        return labels.is_empty();
    }
    let mut cur = vec![false; s];
    cur[0] = true;
    if s > 1 {
        cur[1] = true;
    }
    for _ in 1..frames {
        let mut next = vec![false; s];
        for j in 0..s {
            next[j] =
                cur[j] || (j >= 1 && cur[j - 1]) || (j >= 2 && ext[j] != BLANK && ext[j] != ext[j - 2] && cur[j - 2]);
        }
        cur = next;
    }
    cur[s - 1] || (s > 1 && cur[s - 2])
}

/// Exhaustive grid: frames 0..=10, every label sequence of length 0..=5 over
/// three symbols (so both with and without adjacent repeats).
pub fn feasibility_suite() -> Result<Vec<Outcome>> {
    let mut checked = 0;
    let mut mismatches = Vec::new();
    let (mut with_repeats, mut without_repeats) = (0, 0);
    for len in 0..=5usize {
        for code in 0..3usize.pow(len as u32) {
            let labels: Vec<usize> = (0..len).map(|i| code / 3usize.pow(i as u32) % 3 + 1).collect();
            if labels.windows(2).any(|w| w[0] == w[1]) {
                with_repeats += 1;
            } else {
                without_repeats += 1;
            }
            let targets = CtcTargets::new(labels.clone(), 4)?;
            for frames in 0..=10 {
                checked += 1;
                let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
                let formula = frames >= labels.len() + repeats;
                if feasible(frames, &targets) != formula || formula != reachable(frames, &labels) {
                    mismatches.push((frames, labels.clone()));
                }
            }
        }
    }
    Ok(vec![Outcome::new(
        "feasibility grid",
        mismatches.is_empty() && with_repeats > 0 && without_repeats > 0,
        format!(
            "{checked} cases ({with_repeats} sequences with repeats, {without_repeats} without), {} mismatches",
            mismatches.len()
        ),
    )])
}

/// Largest relative error tolerated by the gradient suite.
pub const GRAD_TOLERANCE: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("positive extents")
}

/// `Σ x ⊙ r` with a fixed random `r`, so every output element matters.
fn project(tape: &mut Tape<f64>, x: &Var<f64>, seed: u64) -> Result<Var<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = rand_tensor(&mut rng, x.shape());
    let y = tape.mul_const(x, r)?;
    Ok(tape.sum(&y))
}

fn randomize(params: &mut ParamSet<f64>, rng: &mut ChaCha8Rng) -> Result<()> {
    for i in 0..params.len() {
        let shape = params.by_index(i).value.shape().to_vec();
        let t = rand_tensor(rng, &shape);
        params.set_value(i, t.map(|v| 0.5 * v))?;
    }
    Ok(())
}

type OpCase = (
    &'static str,
    Vec<Vec<usize>>,
    fn(&mut Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
);

fn op_cases() -> Vec<OpCase> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 5]], |t, v| t.matmul(&v[0], &v[1])),
        ("matmul_nt", vec![vec![3, 4], vec![5, 4]], |t, v| {
            t.matmul_nt(&v[0], &v[1])
        }),
        ("linear", vec![vec![3, 4], vec![4, 2], vec![2]], |t, v| {
            t.linear(&v[0], &v[1], Some(&v[2]))
        }),
        ("add_row", vec![vec![3, 4], vec![4]], |t, v| t.add_row(&v[0], &v[1])),
        ("mul", vec![vec![3, 4], vec![3, 4]], |t, v| t.mul(&v[0], &v[1])),
        ("layer_norm", vec![vec![3, 5], vec![5], vec![5]], |t, v| {
            t.layer_norm(&v[0], &v[1], &v[2], 1e-5)
        }),
        ("softmax", vec![vec![3, 5]], |t, v| t.softmax(&v[0])),
        ("masked_softmax", vec![vec![4, 4]], |t, v| t.masked_softmax(&v[0], 2)),
        ("swish", vec![vec![3, 4]], |t, v| Ok(t.swish(&v[0]))),
        ("relu", vec![vec![3, 4]], |t, v| Ok(t.relu(&v[0]))),
        ("glu", vec![vec![3, 6]], |t, v| t.glu(&v[0])),
        ("conv1d stride 1", vec![vec![6, 3], vec![3, 3, 2], vec![2]], |t, v| {
            t.conv1d(&v[0], &v[1], &v[2], 1, 1)
        }),
        ("conv1d stride 2", vec![vec![5, 3], vec![3, 3, 2], vec![2]], |t, v| {
            t.conv1d(&v[0], &v[1], &v[2], 2, 1)
        }),
        ("conv2d", vec![vec![5, 4, 2], vec![3, 3, 2, 3], vec![3]], |t, v| {
            t.conv2d(&v[0], &v[1], &v[2], 2, 1)
        }),
        ("depthwise_conv1d", vec![vec![6, 3], vec![5, 3], vec![3]], |t, v| {
            t.depthwise_conv1d(&v[0], &v[1], &v[2])
        }),
        ("rel_shift", vec![vec![4, 7]], |t, v| t.rel_shift(&v[0])),
        ("narrow and concat", vec![vec![4, 6]], |t, v| {
            let a = t.narrow_cols(&v[0], 0, 2)?;
            let b = t.narrow_cols(&v[0], 3, 3)?;
            let c = t.concat_cols(&[b, a])?;
            t.narrow_rows(&c, 1, 2)
        }),
        ("upsample and skip", vec![vec![3, 4], vec![5, 4]], |t, v| {
            let up = crate::reduction::upsample_x2(t, &v[0]);
            crate::reduction::skip_combine(t, &up, &v[1])
        }),
        ("decimate and mask", vec![vec![5, 3]], |t, v| {
            let d = t.decimate_rows_x2(&v[0]);
            Ok(t.mask_rows(&d, 2))
        }),
    ]
}

fn layer_check(
    name: &str,
    seed: u64,
    input_shape: &[usize],
    build: impl Fn(&mut Init<'_>) -> Result<LayerFn>,
) -> Result<Outcome> {
    let mut params = ParamSet::new();
    let layer = build(&mut Init::new(&mut params, seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    randomize(&mut params, &mut rng)?;
    let x = rand_tensor(&mut rng, input_shape);
    let err = max_relative_error_params(&params, &x, |tape, p, x| {
        let mut ctx = Ctx::inference(tape, p);
        let y = layer(&mut ctx, x)?;
        project(ctx.tape, &y, seed)
    })?;
    Ok(Outcome::new(
        format!("gradient {name}"),
        err < GRAD_TOLERANCE,
        format!("max relative error {err:.2e}"),
    ))
}

type LayerFn = alloc::boxed::Box<dyn Fn(&mut Ctx<'_, f64>, &Var<f64>) -> Result<Var<f64>>>;

/// Taped gradients of every operation, every layer type and the CTC loss
/// against central differences.
pub fn grad_suite(seed: u64) -> Result<Vec<Outcome>> {
    use alloc::boxed::Box;
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, shapes, f) in op_cases() {
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
        let case_seed = rng.random();
        let err = max_relative_error(&inputs, |t, v| {
            let y = f(t, v)?;
            project(t, &y, case_seed)
        })?;
        out.push(Outcome::new(
            format!("gradient {name}"),
            err < GRAD_TOLERANCE,
            format!("max relative error {err:.2e}"),
        ));
    }

    let cfg = ConformerLayerConfig {
        attn_dim: 8,
        heads: 2,
        ffn_dim: 12,
        conv_kernel: 3,
        dropout: 0.0,
        pos_enc: PosEncoding::Relative,
    };
    let absolute = ConformerLayerConfig {
        pos_enc: PosEncoding::Absolute,
        ..cfg
    };
    out.push(layer_check("ffn", seed + 1, &[5, 8], move |init| {
        let l = FeedForward::new(init, "ffn", &cfg)?;
        Ok(Box::new(move |ctx: &mut Ctx<'_, f64>, x: &Var<f64>| l.forward(ctx, x)) as LayerFn)
    })?);
    out.push(layer_check("mhsa relative", seed + 2, &[5, 8], move |init| {
        let l = SelfAttention::new(init, "mhsa", &cfg)?;
        Ok(Box::new(move |ctx: &mut Ctx<'_, f64>, x: &Var<f64>| l.forward(ctx, x, 4)) as LayerFn)
    })?);
    out.push(layer_check("mhsa absolute", seed + 3, &[5, 8], move |init| {
        let l = SelfAttention::new(init, "mhsa", &absolute)?;
        Ok(Box::new(move |ctx: &mut Ctx<'_, f64>, x: &Var<f64>| l.forward(ctx, x, 5)) as LayerFn)
    })?);
    out.push(layer_check("conv module", seed + 4, &[6, 8], move |init| {
        let l = ConvModule::new(init, "conv", &cfg)?;
        Ok(Box::new(move |ctx: &mut Ctx<'_, f64>, x: &Var<f64>| l.forward(ctx, x, 5)) as LayerFn)
    })?);
    out.push(layer_check("conformer block", seed + 5, &[5, 8], move |init| {
        let l = ConformerBlock::new(init, "block", &cfg)?;
        Ok(Box::new(move |ctx: &mut Ctx<'_, f64>, x: &Var<f64>| l.forward(ctx, x, 4)) as LayerFn)
    })?);
    out.push(layer_check("frontend x4", seed + 6, &[6, FEATURE_DIM], |init| {
        let l = FrontendX4::new(init, "frontend", 2, 4)?;
        Ok(Box::new(move |ctx: &mut Ctx<'_, f64>, x: &Var<f64>| l.forward(ctx, x, 5)) as LayerFn)
    })?);
    out.push(layer_check("downsample x2", seed + 7, &[5, 4], |init| {
        let l = DownsampleX2::new(init, "down", 4, 6)?;
        Ok(Box::new(move |ctx: &mut Ctx<'_, f64>, x: &Var<f64>| l.forward(ctx, x, 5)) as LayerFn)
    })?);

    let mut worst = 0.0f64;
    for case in 0..10 {
        let t = rng.random_range(2..=5);
        let v = rng.random_range(2..=4);
        let n = rng.random_range(0..=2);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(1..v)).collect();
        let targets = CtcTargets::new(labels, v)?;
        if !feasible(t, &targets) {
            continue;
        }
        let logits = random_logits(&mut rng, t + case % 2, v);
        let err = max_relative_error(&[logits], |tape, vars| ctc_loss(tape, &vars[0], t, &targets))?;
        worst = worst.max(err);
    }
    out.push(Outcome::new(
        "gradient ctc_loss",
        worst < GRAD_TOLERANCE,
        format!("max relative error {worst:.2e}"),
    ));
    Ok(out)
}

/// Optimizer steps within which the toy model must memorize its corpus.
pub const CONVERGENCE_STEPS: u64 = 300;
pub const CONVERGENCE_UTTERANCES: usize = 5;
pub const CONVERGENCE_VOCAB: usize = crate::model::TOY_VOCAB;

/// The toy corpus: five one-second utterances of four labels each.
pub fn convergence_corpus(seed: u64) -> Result<Vec<Utterance>> {
    Ok(corpus(CONVERGENCE_UTTERANCES, 1.0, 4, CONVERGENCE_VOCAB, seed)?
        .into_iter()
        .map(|u| Utterance {
            features: u.features,
            labels: u.labels,
        })
        .collect())
}

/// Overfits the toy model with and without intermediate CTC and checks the
/// greedy transcripts, the loss trace and the learning-rate trace.
pub fn convergence_suite(seed: u64, steps: u64) -> Result<Vec<Outcome>> {
    let data = convergence_corpus(seed)?;
    let mut out = Vec::new();
    for inter in [false, true] {
        let mut config = EncoderConfig::toy(CONVERGENCE_VOCAB);
        config.intermediate_ctc = inter;
        let train = TrainConfig::toy(steps, seed);
        let run = train_toy(&config, &data, &train)?;
        let tag = if inter {
            "with intermediate ctc"
        } else {
            "final ctc only"
        };
        let matches = exact_matches(&run.encoder, &data)?;
        out.push(Outcome::new(
            format!("overfit {tag}"),
            matches == data.len() && run.dropped.is_empty(),
            format!("{matches}/{} exact after {steps} steps", data.len()),
        ));
        let bad = run.trace.iter().filter(|r| !r.loss.is_finite()).count();
        let last = run.trace.last().map_or(f64::NAN, |r| r.loss);
        out.push(Outcome::new(
            format!("finite loss {tag}"),
            bad == 0 && run.trace.len() as u64 == steps,
            format!("{bad} non-finite of {}, last {last:.4}", run.trace.len()),
        ));
        let lr_ok = run.trace.iter().all(|r| r.lr == lr_at(r.step, &train.schedule));
        out.push(Outcome::new(
            format!("lr trace {tag}"),
            lr_ok,
            String::from(if lr_ok {
                "matches schedule"
            } else {
                "diverges from schedule"
            }),
        ));
    }
    Ok(out)
}

/// Save/load round trips of the toy model at both precisions.
pub fn checkpoint_suite(seed: u64) -> Result<Vec<Outcome>> {
    let config = EncoderConfig::toy(CONVERGENCE_VOCAB);
    let wide = Encoder::build(&config, seed)?;
    let feats = crate::synth::noise_features(0.7, seed)?;
    Ok(vec![
        round_trip("f64", &wide, &feats)?,
        round_trip("f32", &wide.cast::<f32>(), &feats.cast::<f32>())?,
    ])
}

fn round_trip<T: crate::numerics::Real>(tag: &str, encoder: &Encoder<T>, feats: &Tensor<T>) -> Result<Outcome> {
    let bytes = encoder.to_checkpoint();
    let loaded = Encoder::<T>::from_checkpoint(&bytes)?;
    let again = loaded.to_checkpoint();
    let before = encoder.logits(feats)?;
    let after = loaded.logits(feats)?;
    let same_bits = before.shape() == after.shape()
        && before
            .data()
            .iter()
            .zip(after.data())
            .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits());
    Ok(Outcome::new(
        format!("checkpoint {tag}"),
        same_bits && bytes == again,
        format!(
            "{} bytes, forward {}, resave {}",
            bytes.len(),
            if same_bits { "bit-identical" } else { "differs" },
            if bytes == again { "byte-identical" } else { "differs" }
        ),
    ))
}
