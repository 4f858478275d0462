//! One line per acceptance criterion; exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use uconv::bench::{compare, BenchOptions};
use uconv::formats::{read_checkpoint, write_checkpoint};
use uconv_core::checks::{self, Outcome};
use uconv_core::model::{Encoder, EncoderConfig};
use uconv_core::reduction::{stage_lengths, ReductionPolicy};
use uconv_core::synth::noise_features;

const SEED: u64 = 42;

type Criterion = fn() -> uconv::Result<Verdict>;

struct Verdict {
    passed: bool,
    summary: String,
    failures: Vec<String>,
}

fn fold(outcomes: Vec<Outcome>, summary: impl Into<String>) -> Verdict {
    let failures: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("{}: {}", o.name, o.detail))
        .collect();
    Verdict {
        passed: failures.is_empty(),
        summary: format!("{} ({} checks)", summary.into(), outcomes.len()),
        failures,
    }
}

fn parameter_budgets() -> uconv::Result<Verdict> {
    let outcomes = checks::params_suite()?;
    let headline: Vec<String> = outcomes
        .iter()
        .filter(|o| {
            [
                "conformer-s",
                "conv-conformer-v2",
                "uconv-d16-f8-v1",
                "uconv-d32-f8",
                "conformer-l",
            ]
            .iter()
            .any(|m| o.name == format!("params {m}"))
        })
        .map(|o| {
            format!(
                "{} {}",
                o.name.trim_start_matches("params "),
                o.detail.split(' ').next().unwrap_or("")
            )
        })
        .collect();
    Ok(fold(outcomes, headline.join(", ")))
}

fn ctc_oracles() -> uconv::Result<Verdict> {
    Ok(fold(
        checks::oracle_suite(SEED, 200, 100, 20)?,
        "200 loss instances vs enumeration, 100 beam-20 instances vs most probable labelling",
    ))
}

fn gradients() -> uconv::Result<Verdict> {
    let outcomes = checks::grad_suite(SEED)?;
    let worst = outcomes
        .iter()
        .filter_map(|o| o.detail.rsplit(' ').next()?.parse::<f64>().ok())
        .fold(0.0, f64::max);
    Ok(fold(
        outcomes,
        format!("worst relative error {worst:.2e} < {:.0e}", checks::GRAD_TOLERANCE),
    ))
}

fn lengths() -> uconv::Result<Verdict> {
    let mut outcomes = checks::lengths_suite(SEED, 1000)?;
    let table: [(&str, &[usize]); 4] = [
        ("x4", &[750]),
        ("x4-x8", &[750, 375]),
        ("x4-x8-x16-x8", &[750, 375, 188, 375]),
        ("x4-x8-x16-x32-x16-x8", &[750, 375, 188, 94, 188, 375]),
    ];
    for (levels, expected) in table {
        let got = stage_lengths(&ReductionPolicy::parse(levels, None)?, 2998)?;
        outcomes.push(Outcome {
            name: format!("T=2998 {levels}"),
            passed: got == expected,
            detail: format!("{got:?}"),
        });
    }
    Ok(fold(outcomes, "four preset tables at T=2998, 1000 random T within +-2"))
}

fn feasibility() -> uconv::Result<Verdict> {
    Ok(fold(
        checks::feasibility_suite()?,
        "exhaustive T_out 0..=10, |y| 0..=5 grid",
    ))
}

fn speed() -> uconv::Result<Verdict> {
    let names = ["conformer-s", "uconv-d16-f8-v1", "uconv-d16-f8-v2", "uconv-d32-f8"];
    let models = names
        .iter()
        .map(|n| Ok((n.to_string(), EncoderConfig::preset(n)?)))
        .collect::<uconv::Result<Vec<_>>>()?;
    let report = compare(&models, &BenchOptions::new(30.0, 10, SEED))?;
    let median = |i: usize| report.entries[i].median_ms;
    let v1 = report.delta_pct(1);
    let mut failures = Vec::new();
    if v1 > -20.0 {
        failures.push(format!("uconv-d16-f8-v1 delta {v1:+.1}% is not at least 20% faster"));
    }
    if !(median(3) <= median(2) && median(2) <= median(1) && median(1) < median(0)) {
        failures.push("ordering d32 <= d16-v2 <= d16-v1 < conformer-s violated".into());
    }
    let summary = (0..names.len())
        .map(|i| format!("{} {:.0} ms ({:+.1}%)", names[i], median(i), report.delta_pct(i)))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Verdict {
        passed: failures.is_empty(),
        summary,
        failures,
    })
}

fn convergence() -> uconv::Result<Verdict> {
    Ok(fold(
        checks::convergence_suite(SEED, checks::CONVERGENCE_STEPS)?,
        format!("toy x4-x8-x16-x8, 5 utterances, {} steps", checks::CONVERGENCE_STEPS),
    ))
}

fn checkpoints() -> uconv::Result<Verdict> {
    let mut outcomes = checks::checkpoint_suite(SEED)?;
    let dir = tempfile::tempdir().map_err(|e| uconv::Error::io("tempdir", e))?;
    let encoder = Encoder::build(&EncoderConfig::preset("uconv-d16-f8-v1")?, SEED)?.cast::<f32>();
    let feats = noise_features(1.0, SEED)?.cast::<f32>();
    let first = dir.path().join("a.ckpt");
    let second = dir.path().join("b.ckpt");
    write_checkpoint(&first, &encoder)?;
    let loaded = read_checkpoint::<f32>(&first)?;
    write_checkpoint(&second, &loaded)?;
    let same_logits = encoder.logits(&feats)?.data() == loaded.logits(&feats)?.data();
    let read = |p: &std::path::Path| std::fs::read(p).map_err(|e| uconv::Error::io(p, e));
    let same_bytes = read(&first)? == read(&second)?;
    outcomes.push(Outcome {
        name: "checkpoint file uconv-d16-f8-v1 f32".into(),
        passed: same_logits && same_bytes,
        detail: format!("forward identical {same_logits}, resave identical {same_bytes}"),
    });
    Ok(fold(
        outcomes,
        "save/load/forward bit-identical, save/load/save byte-identical",
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] = [
        ("parameter budgets", parameter_budgets),
        ("CTC oracle equivalence", ctc_oracles),
        ("gradient correctness", gradients),
        ("length arithmetic", lengths),
        ("feasibility", feasibility),
        ("speed direction", speed),
        ("convergence", convergence),
        ("checkpoint round trip", checkpoints),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = run().unwrap_or_else(|e| Verdict {
            passed: false,
            summary: format!("error: {e}"),
            failures: Vec::new(),
        });
        let mark = if verdict.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {} {mark} {name}: {} [{:.1} s]",
            i + 1,
            verdict.summary,
            start.elapsed().as_secs_f64()
        );
        for f in &verdict.failures {
            println!("    {f}");
        }
        failed += usize::from(!verdict.passed);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
