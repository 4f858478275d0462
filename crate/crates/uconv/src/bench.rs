//! Single-thread inference latency of encoders on synthetic input, and
//! comparison tables against a baseline.

use std::fmt::Write;
use std::time::Instant;

use uconv_core::model::{Encoder, EncoderConfig, Section, SequenceBatch, StageObserver};
use uconv_core::synth::{frames_for, noise_features};

use crate::{Error, Result};

pub const DEFAULT_WARMUP: usize = 2;
pub const MIN_REPEATS: usize = 5;
pub const CSV_HEADER: &str = "model,params,policy,layers,median_ms,mean_ms,std_ms,delta_vs_baseline_pct";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub seconds: f64,
    pub threads: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl BenchOptions {
    pub fn new(seconds: f64, repeats: usize, seed: u64) -> Self {
        Self {
            seconds,
            threads: 1,
            repeats,
            warmup: DEFAULT_WARMUP,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.threads != 1 {
            return Err(Error::Threads(self.threads));
        }
        if self.repeats < MIN_REPEATS {
            return Err(Error::Invalid(format!(
                "repeats must be at least {MIN_REPEATS}, got {}",
                self.repeats
            )));
        }
        Ok(())
    }
}

/// Median time of one forward section.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTime {
    pub section: String,
    pub median_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchEntry {
    pub model: String,
    pub params: usize,
    pub policy: String,
    pub layers: String,
    pub input_frames: usize,
    pub output_frames: usize,
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub stages: Vec<StageTime>,
}

impl BenchEntry {
    /// Sum of the per-section medians.
    pub fn stage_total_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.median_ms).sum()
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn section_name(s: Section) -> String {
    match s {
        Section::Frontend => "frontend".into(),
        Section::Transition(i) => format!("transition{i}"),
        Section::Stage(i) => format!("stage{i}"),
        Section::Output => "output".into(),
    }
}

#[derive(Default)]
struct Timer {
    open: Option<(usize, Instant)>,
    names: Vec<String>,
    elapsed: Vec<f64>,
}

impl Timer {
    fn close(&mut self) {
        if let Some((i, start)) = self.open.take() {
            self.elapsed[i] += start.elapsed().as_secs_f64() * 1e3;
        }
    }
}

impl StageObserver for Timer {
    fn begin(&mut self, section: Section) {
        self.close();
        let name = section_name(section);
        let i = match self.names.iter().position(|n| *n == name) {
            Some(i) => i,
            None => {
                self.names.push(name);
                self.elapsed.push(0.0);
                self.names.len() - 1
            }
        };
        self.open = Some((i, Instant::now()));
    }

    fn end(&mut self) {
        self.close();
    }
}

/// Times `repeats` inference passes over a seeded `seconds`-long synthetic
/// utterance after `warmup` untimed passes.
pub fn time_forward(model: &str, encoder: &Encoder<f32>, opts: &BenchOptions) -> Result<BenchEntry> {
    opts.validate()?;
    let frames = frames_for(opts.seconds)?;
    let feats = noise_features(opts.seconds, opts.seed)?.cast::<f32>();
    let batch = SequenceBatch::from_utterances(std::slice::from_ref(&feats), 0)?;
    let mut output_frames = 0;
    for _ in 0..opts.warmup {
        output_frames = encoder.forward(&batch)?.lengths[0];
    }
    let mut samples = Vec::with_capacity(opts.repeats);
    let mut per_stage: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    for _ in 0..opts.repeats {
        let mut timer = Timer::default();
        let start = Instant::now();
        let out = encoder.forward_observed(&batch, &mut timer)?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
        output_frames = out.lengths[0];
        if per_stage.is_empty() {
            per_stage = vec![Vec::with_capacity(opts.repeats); timer.names.len()];
            names = timer.names.clone();
        }
        for (acc, t) in per_stage.iter_mut().zip(&timer.elapsed) {
            acc.push(*t);
        }
    }
    let (mean_ms, std_ms) = mean_std(&samples);
    let config = encoder.config();
    Ok(BenchEntry {
        model: model.to_string(),
        params: encoder.count_params(),
        policy: config.policy.levels_text(),
        layers: config.policy.layers_text(),
        input_frames: frames,
        output_frames,
        median_ms: median(&samples),
        mean_ms,
        std_ms,
        samples_ms: samples,
        stages: names
            .into_iter()
            .zip(&per_stage)
            .map(|(section, t)| StageTime {
                section,
                median_ms: median(t),
            })
            .collect(),
    })
}

/// Timings of several models; the first is the baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub seconds: f64,
    pub repeats: usize,
    pub entries: Vec<BenchEntry>,
}

impl BenchReport {
    /// Percent change of median latency against the baseline; negative is faster.
    pub fn delta_pct(&self, i: usize) -> f64 {
        let base = self.entries[0].median_ms;
        100.0 * (self.entries[i].median_ms - base) / base
    }

    pub fn entry(&self, model: &str) -> Option<&BenchEntry> {
        self.entries.iter().find(|e| e.model == model)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{:.3},{:.3},{:.3},{:.2}",
                e.model,
                e.params,
                e.policy,
                e.layers,
                e.median_ms,
                e.mean_ms,
                e.std_ms,
                self.delta_pct(i)
            )
            .expect("write to String");
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "Inference latency, {} s input, {} repeats, 1 thread, f32\n\n",
            self.seconds, self.repeats
        );
        out.push_str("| model | params | policy | layers | median ms | mean ms | std ms | delta % |\n");
        out.push_str("|---|---:|---|---|---:|---:|---:|---:|\n");
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(
                out,
                "| {} | {:.1} M | {} | {} | {:.1} | {:.1} | {:.1} | {:+.1} |",
                e.model,
                e.params as f64 / 1e6,
                e.policy,
                e.layers,
                e.median_ms,
                e.mean_ms,
                e.std_ms,
                self.delta_pct(i)
            )
            .expect("write to String");
        }
        out
    }
}

/// Builds each named configuration from its own seed, casts it to f32 and
/// times it with the same input.
pub fn compare(models: &[(String, EncoderConfig)], opts: &BenchOptions) -> Result<BenchReport> {
    if models.len() < 2 {
        return Err(Error::Invalid(
            "compare needs a baseline and at least one candidate".into(),
        ));
    }
    opts.validate()?;
    let mut entries = Vec::with_capacity(models.len());
    for (name, config) in models {
        let encoder = Encoder::build(config, config.seed)?.cast::<f32>();
        entries.push(time_forward(name, &encoder, opts)?);
    }
    Ok(BenchReport {
        seconds: opts.seconds,
        repeats: opts.repeats,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Encoder<f32> {
        Encoder::build(&EncoderConfig::toy(10), 1).unwrap().cast()
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn enforces_single_thread_and_repeats() {
        let e = toy();
        let mut opts = BenchOptions::new(1.0, 5, 0);
        opts.threads = 2;
        assert!(matches!(time_forward("toy", &e, &opts), Err(Error::Threads(2))));
        let opts = BenchOptions::new(1.0, 4, 0);
        assert!(matches!(time_forward("toy", &e, &opts), Err(Error::Invalid(_))));
        let opts = BenchOptions::new(0.0, 5, 0);
        assert!(matches!(
            time_forward("toy", &e, &opts),
            Err(Error::Core(uconv_core::Error::TooShort { .. }))
        ));
    }

    #[test]
    fn entry_records_lengths_and_sections() {
        let e = toy();
        let entry = time_forward("toy", &e, &BenchOptions::new(2.0, 5, 3)).unwrap();
        assert_eq!(entry.input_frames, 198);
        assert_eq!(entry.output_frames, 25);
        assert_eq!(entry.samples_ms.len(), 5);
        let names: Vec<&str> = entry.stages.iter().map(|s| s.section.as_str()).collect();
        assert_eq!(
            names,
            [
                "frontend",
                "stage0",
                "transition1",
                "stage1",
                "transition2",
                "stage2",
                "transition3",
                "stage3",
                "output"
            ]
        );
        assert!(entry.std_ms >= 0.0 && entry.mean_ms > 0.0);
    }

    #[test]
    fn report_tables() {
        let cfg = EncoderConfig::toy(10);
        let report = compare(
            &[("a".into(), cfg.clone()), ("b".into(), cfg)],
            &BenchOptions::new(1.0, 5, 0),
        )
        .unwrap();
        assert_eq!(report.delta_pct(0), 0.0);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("a,"));
        assert_eq!(lines[1].split(',').count(), 8);
        assert!(lines[1].contains(",x4-x8-x16-x8,1-1-1-1,"));
        let md = report.to_markdown();
        assert!(md.contains("| a |") && md.contains("| b |"));
        assert!(compare(&[("a".into(), EncoderConfig::toy(10))], &BenchOptions::new(1.0, 5, 0)).is_err());
    }
}
