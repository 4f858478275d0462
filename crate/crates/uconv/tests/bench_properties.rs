use std::sync::{Mutex, MutexGuard};

use uconv::bench::{compare, time_forward, BenchOptions};
use uconv_core::model::{Encoder, EncoderConfig};

static TIMING: Mutex<()> = Mutex::new(());

fn exclusive() -> MutexGuard<'static, ()> {
    TIMING.lock().unwrap_or_else(|e| e.into_inner())
}

fn preset(name: &str) -> Encoder<f32> {
    let config = EncoderConfig::preset(name).unwrap();
    Encoder::build(&config, config.seed).unwrap().cast()
}

#[test]
fn thirty_seconds_reach_375_frames_under_d16_f8() {
    let _guard = exclusive();
    let entry = time_forward("v1", &preset("uconv-d16-f8-v1"), &BenchOptions::new(30.0, 5, 42)).unwrap();
    assert_eq!(entry.input_frames, 2998);
    assert_eq!(entry.output_frames, 375);
    let total = entry.stage_total_ms();
    assert!(
        (total - entry.median_ms).abs() <= 0.05 * entry.median_ms,
        "{total} vs {}",
        entry.median_ms
    );
}

#[test]
fn repeated_runs_agree_within_ten_percent() {
    let _guard = exclusive();
    let encoder = preset("uconv-d16-f8-v1");
    let opts = BenchOptions::new(10.0, 7, 42);
    let a = time_forward("a", &encoder, &opts).unwrap().median_ms;
    let b = time_forward("b", &encoder, &opts).unwrap().median_ms;
    assert!((a - b).abs() <= 0.10 * a.min(b), "{a} vs {b}");
}

#[test]
fn attention_cost_grows_superlinearly() {
    let _guard = exclusive();
    let encoder = preset("conformer-s");
    let short = time_forward("20s", &encoder, &BenchOptions::new(20.0, 5, 42)).unwrap();
    let long = time_forward("40s", &encoder, &BenchOptions::new(40.0, 5, 42)).unwrap();
    assert!(short.input_frames > 1500);
    let ratio = long.median_ms / short.median_ms;
    assert!(ratio > 2.0, "ratio {ratio:.3}");
}

#[test]
fn baseline_against_itself_is_near_zero() {
    let _guard = exclusive();
    let config = EncoderConfig::preset("uconv-d16-f8-v1").unwrap();
    let report = compare(
        &[("base".into(), config.clone()), ("same".into(), config)],
        &BenchOptions::new(5.0, 9, 1),
    )
    .unwrap();
    assert_eq!(report.delta_pct(0), 0.0);
    assert!(report.delta_pct(1).abs() < 10.0, "{}", report.delta_pct(1));
    assert_eq!(report.entries[0].params, report.entries[1].params);
    let again = compare(
        &[
            ("base".into(), EncoderConfig::preset("uconv-d16-f8-v1").unwrap()),
            ("same".into(), EncoderConfig::preset("uconv-d16-f8-v1").unwrap()),
        ],
        &BenchOptions::new(1.0, 5, 1),
    )
    .unwrap();
    let shape = |csv: String| {
        csv.lines()
            .map(|l| l.split(',').take(4).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
    };
    assert_eq!(shape(report.to_csv()), shape(again.to_csv()));
}
