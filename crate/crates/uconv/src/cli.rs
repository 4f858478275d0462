//! The `uconv` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use uconv_core::checks::{self, Outcome};
use uconv_core::ctc::{beam_search, greedy_decode};
use uconv_core::model::{Encoder, EncoderConfig, DEFAULT_SEED, PRESETS};
use uconv_core::reduction::stage_lengths;
use uconv_core::synth::corpus;
use uconv_core::trainer::{greedy_transcripts, train_encoder, TrainConfig};

use crate::audio::LogMel;
use crate::bench::{compare, BenchOptions, DEFAULT_WARMUP};
use crate::formats::{
    load_dataset, load_features, manifest_path, read_checkpoint, read_config, write_checkpoint, write_feat, Vocabulary,
};
use crate::{Error, Result};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_FAILED: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "uconv", version, about = "Conformer and Uconv-Conformer CTC encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the reduction policy, per-stage layers and parameter counts.
    Describe(DescribeArgs),
    /// Time single-thread inference of a baseline and candidates.
    Bench(BenchArgs),
    /// Train a model on a small dataset and write a checkpoint.
    TrainToy(TrainArgs),
    /// Transcribe one WAV or FEAT file.
    Decode(DecodeArgs),
    /// Run property suites.
    Check(CheckArgs),
    /// Write a seeded synthetic dataset (FEAT files, transcripts, manifest, vocabulary).
    SynthData(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Configuration file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// Named configuration.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Input feature frames to trace through the stages.
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Baseline configuration file or preset name.
    #[arg(long)]
    pub baseline: String,
    /// Candidate configuration file or preset name.
    #[arg(long, required = true)]
    pub candidate: Vec<String>,
    #[arg(long, default_value_t = 30.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    pub warmup: usize,
    /// Math threads; only 1 is accepted.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// CSV report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Manifest file, or a directory containing `manifest.tsv`.
    #[arg(long)]
    pub data: PathBuf,
    /// Vocabulary file; defaults to `vocab.txt` next to the manifest.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub steps: u64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 2e-3)]
    pub peak_lr: f64,
    /// Warmup steps; defaults to a tenth of the run.
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long, default_value_t = 2000)]
    pub frame_budget: usize,
    #[arg(long, default_value_t = 1)]
    pub grad_accum: usize,
    /// Frequency/time masking of training features.
    #[arg(long)]
    pub augment: bool,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss-trace CSV path; defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// `.wav` audio or FEAT features.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Beam width; 1 is best-path greedy decoding.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub beam: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Oracle,
    Grad,
    Lengths,
    Params,
    Feasibility,
    Convergence,
    Checkpoint,
    All,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    pub suite: Suite,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub count: usize,
    #[arg(long, default_value_t = 1.0)]
    pub seconds: f64,
    /// Labels per transcript.
    #[arg(long, default_value_t = 4)]
    pub labels: usize,
    /// Vocabulary size including the blank.
    #[arg(long, default_value_t = 10)]
    pub vocab: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn main_with<I, A>(args: I) -> u8
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(report) => {
            print!("{}", report.text);
            if report.failures.is_empty() {
                EXIT_OK
            } else {
                eprintln!("{} check(s) failed:", report.failures.len());
                for f in &report.failures {
                    eprintln!("  {f}");
                }
                EXIT_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Standard output of a command plus any failed properties.
#[derive(Debug, Default)]
pub struct Report {
    pub text: String,
    pub failures: Vec<String>,
}

pub fn run(command: &Command) -> Result<Report> {
    match command {
        Command::Describe(a) => describe(a),
        Command::Bench(a) => bench(a),
        Command::TrainToy(a) => train(a),
        Command::Decode(a) => decode(a),
        Command::Check(a) => check(a),
        Command::SynthData(a) => synth_data(a),
    }
}

fn load_model(arg: &ModelArg) -> Result<(String, EncoderConfig)> {
    match (&arg.config, &arg.preset) {
        (Some(path), _) => Ok((stem(path), read_config(path)?)),
        (None, Some(name)) => Ok((name.clone(), EncoderConfig::preset(name)?)),
        (None, None) => Err(Error::Invalid("either --config or --preset is required".into())),
    }
}

/// A path to an existing file is read as a configuration; anything else
/// must name a preset.
fn resolve_model(spec: &str) -> Result<(String, EncoderConfig)> {
    let path = Path::new(spec);
    if path.is_file() {
        return Ok((stem(path), read_config(path)?));
    }
    if PRESETS.contains(&spec) {
        return Ok((spec.to_string(), EncoderConfig::preset(spec)?));
    }
    Err(Error::Invalid(format!(
        "'{spec}' is neither a configuration file nor a preset ({})",
        PRESETS.join(", ")
    )))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn describe(a: &DescribeArgs) -> Result<Report> {
    let (name, config) = load_model(&a.model)?;
    let encoder = Encoder::build(&config, config.seed)?;
    let policy = &config.policy;
    let l = &config.layer;
    let mut t = String::new();
    writeln!(t, "model: {name}").unwrap();
    writeln!(
        t,
        "layer: attn_dim={} heads={} ffn_dim={} conv_kernel={} pos_enc={:?} dropout={}",
        l.attn_dim, l.heads, l.ffn_dim, l.conv_kernel, l.pos_enc, l.dropout
    )
    .unwrap();
    writeln!(
        t,
        "policy: {} / {} ({} layers, depth x{}, final x{})",
        policy.levels_text(),
        policy.layers_text(),
        policy.total_layers(),
        policy.reduction_depth(),
        policy.final_reduction()
    )
    .unwrap();
    writeln!(
        t,
        "vocab: {}  intermediate_ctc: {}",
        config.vocab_size, config.intermediate_ctc
    )
    .unwrap();
    let lengths = a.frames.map(|f| stage_lengths(policy, f)).transpose()?;
    writeln!(
        t,
        "stage  level  layers  entry      params{}",
        if lengths.is_some() { "  frames" } else { "" }
    )
    .unwrap();
    let count = |prefix: &str| -> usize {
        encoder
            .params()
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    };
    writeln!(
        t,
        "-      -      -       frontend   {:>10}",
        thousands(count("frontend."))
    )
    .unwrap();
    for (i, (&level, &layers)) in policy.levels().iter().zip(policy.layers()).enumerate() {
        let entry = match i {
            0 => "start",
            _ if level > policy.levels()[i - 1] => "down",
            _ => "up+skip",
        };
        let n = count(&format!("stage{i}."));
        write!(t, "{i:<6} x{level:<5} {layers:<7} {entry:<10} {:>10}", thousands(n)).unwrap();
        if let Some(lens) = &lengths {
            write!(t, "  {}", lens[i]).unwrap();
        }
        t.push('\n');
    }
    writeln!(
        t,
        "-      -      -       output     {:>10}",
        thousands(count("output."))
    )
    .unwrap();
    let total = encoder.count_params();
    writeln!(t, "{} params", thousands(total)).unwrap();
    if let (Some(frames), Some(lens)) = (a.frames, &lengths) {
        let list: Vec<String> = lens.iter().map(usize::to_string).collect();
        writeln!(t, "frames {frames} -> stage lengths [{}]", list.join(",")).unwrap();
    }
    Ok(Report {
        text: t,
        failures: Vec::new(),
    })
}

fn bench(a: &BenchArgs) -> Result<Report> {
    let mut models = vec![resolve_model(&a.baseline)?];
    for c in &a.candidate {
        models.push(resolve_model(c)?);
    }
    let opts = BenchOptions {
        seconds: a.seconds,
        threads: a.threads,
        repeats: a.repeats,
        warmup: a.warmup,
        seed: a.seed,
    };
    let report = compare(&models, &opts)?;
    if let Some(out) = &a.out {
        fs::write(out, report.to_csv()).map_err(|e| Error::io(out, e))?;
    }
    let mut text = report.to_markdown();
    for e in &report.entries {
        let stages: Vec<String> = e
            .stages
            .iter()
            .map(|s| format!("{} {:.1}", s.section, s.median_ms))
            .collect();
        writeln!(text, "\n{} sections (median ms): {}", e.model, stages.join(", ")).unwrap();
    }
    Ok(Report {
        text,
        failures: Vec::new(),
    })
}

fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

fn train(a: &TrainArgs) -> Result<Report> {
    let (name, config) = load_model(&a.model)?;
    let manifest = manifest_path(&a.data);
    let vocab_path = a
        .vocab
        .clone()
        .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new("")).join("vocab.txt"));
    let vocab = Vocabulary::read(&vocab_path)?;
    if vocab.len() != config.vocab_size {
        return Err(Error::VocabMismatch {
            vocab: vocab.len(),
            model: config.vocab_size,
        });
    }
    let data = load_dataset(&manifest, &vocab)?;
    let mut train = TrainConfig::toy(a.steps, a.seed);
    train.schedule.peak_lr = a.peak_lr;
    if let Some(w) = a.warmup {
        train.schedule.warmup_steps = w;
        train.schedule.total_steps = a.steps.max(w);
    }
    train.frame_budget = a.frame_budget;
    train.grad_accum = a.grad_accum;
    train.augment = a.augment;
    let encoder = Encoder::build(&config, a.seed)?;
    let outcome = train_encoder(encoder, &data, &train)?;

    write_checkpoint(&a.out, &outcome.encoder)?;
    let trace_path = a.trace.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    let mut csv = String::from("step,lr,loss\n");
    for r in &outcome.trace {
        writeln!(csv, "{},{:e},{}", r.step, r.lr, r.loss).unwrap();
    }
    fs::write(&trace_path, csv).map_err(|e| Error::io(&trace_path, e))?;

    let hyps = greedy_transcripts(&outcome.encoder, &data)?;
    let (errors, words) = hyps.iter().zip(&data).fold((0, 0), |(e, n), (h, u)| {
        (e + edit_distance(h, &u.labels), n + u.labels.len())
    });
    let exact = hyps.iter().zip(&data).filter(|(h, u)| **h == u.labels).count();
    let mut t = String::new();
    writeln!(
        t,
        "model: {name} ({} params)",
        thousands(outcome.encoder.count_params())
    )
    .unwrap();
    writeln!(
        t,
        "utterances: {} loaded, {} dropped as infeasible",
        data.len(),
        outcome.dropped.len()
    )
    .unwrap();
    for &i in &outcome.dropped {
        writeln!(t, "  dropped utterance {i}").unwrap();
    }
    if let Some(last) = outcome.trace.last() {
        writeln!(t, "steps: {}  final loss: {:.4}", last.step, last.loss).unwrap();
    } else {
        writeln!(t, "steps: 0").unwrap();
    }
    let wer = if words == 0 {
        0.0
    } else {
        100.0 * errors as f64 / words as f64
    };
    writeln!(t, "train greedy: {exact}/{} exact, WER {wer:.2}%", data.len()).unwrap();
    writeln!(t, "checkpoint: {}", a.out.display()).unwrap();
    writeln!(t, "loss trace: {}", trace_path.display()).unwrap();
    Ok(Report {
        text: t,
        failures: Vec::new(),
    })
}

fn decode(a: &DecodeArgs) -> Result<Report> {
    let encoder = read_checkpoint::<f64>(&a.model)?;
    let vocab = Vocabulary::read(&a.vocab)?;
    if vocab.len() != encoder.config().vocab_size {
        return Err(Error::VocabMismatch {
            vocab: vocab.len(),
            model: encoder.config().vocab_size,
        });
    }
    let feats = load_features(&a.input, &LogMel::new())?;
    let logits = encoder.logits(feats.frames())?;
    let labels = if a.beam == 1 {
        greedy_decode(&logits)
    } else {
        beam_search(&logits, a.beam as usize)
            .into_iter()
            .next()
            .map(|h| h.labels)
            .unwrap_or_default()
    };
    Ok(Report {
        text: format!("{}\n", vocab.decode(&labels)),
        failures: Vec::new(),
    })
}

fn check(a: &CheckArgs) -> Result<Report> {
    let seed = a.seed;
    let suites: Vec<Suite> = match a.suite {
        Suite::All => vec![
            Suite::Params,
            Suite::Oracle,
            Suite::Grad,
            Suite::Lengths,
            Suite::Feasibility,
            Suite::Checkpoint,
            Suite::Convergence,
        ],
        s => vec![s],
    };
    let mut report = Report::default();
    for suite in suites {
        let outcomes: Vec<Outcome> = match suite {
            Suite::Params => checks::params_suite()?,
            Suite::Oracle => checks::oracle_suite(seed, 200, 100, 20)?,
            Suite::Grad => checks::grad_suite(seed)?,
            Suite::Lengths => checks::lengths_suite(seed, 1000)?,
            Suite::Feasibility => checks::feasibility_suite()?,
            Suite::Checkpoint => checks::checkpoint_suite(seed)?,
            Suite::Convergence => checks::convergence_suite(seed, checks::CONVERGENCE_STEPS)?,
            Suite::All => unreachable!("expanded above"),
        };
        for o in outcomes {
            let mark = if o.passed { "ok  " } else { "FAIL" };
            writeln!(report.text, "{mark} {}: {}", o.name, o.detail).unwrap();
            if !o.passed {
                report.failures.push(format!("{}: {}", o.name, o.detail));
            }
        }
    }
    Ok(report)
}

fn synth_data(a: &SynthArgs) -> Result<Report> {
    let vocab = Vocabulary::numbered(a.vocab)?;
    let utterances = corpus(a.count, a.seconds, a.labels, a.vocab, a.seed)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut manifest = String::new();
    for (i, u) in utterances.iter().enumerate() {
        let feat = format!("utt{i:03}.feat");
        let txt = format!("utt{i:03}.txt");
        let features = uconv_core::features::FeatureMatrix::new(u.features.clone())?;
        write_feat(&a.out.join(&feat), &features)?;
        let text = format!("{}\n", vocab.decode(&u.labels));
        let path = a.out.join(&txt);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        writeln!(manifest, "{feat}\t{txt}").unwrap();
    }
    let path = a.out.join("manifest.tsv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    vocab.write(&a.out.join("vocab.txt"))?;
    Ok(Report {
        text: format!("wrote {} utterances to {}\n", utterances.len(), a.out.display()),
        failures: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thousands_separators() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(1000), "1,000");
        assert_eq!(thousands(24_601_793), "24,601,793");
    }

    #[test]
    fn edit_distances() {
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(edit_distance(&[], &[1, 2]), 2);
        assert_eq!(edit_distance(&[1, 3], &[1, 2, 3]), 1);
        assert_eq!(edit_distance(&[2, 1], &[1, 2]), 2);
    }
}
