use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use uconv::formats::{read_checkpoint, write_feat};
use uconv_core::features::{FeatureMatrix, FEATURE_DIM};
use uconv_core::model::{Encoder, EncoderConfig};
use uconv_core::Tensor;

fn uconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uconv"))
        .args(args)
        .output()
        .expect("spawn uconv")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn describe_preset_with_frames() {
    let o = uconv(&["describe", "--preset", "uconv-d16-f8-v1", "--frames", "2998"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("24,601,793 params"), "{out}");
    assert!(out.contains("frames 2998 -> stage lengths [750,375,188,375]"), "{out}");
    assert!(out.contains("x4-x8-x16-x8 / 3-3-3-3"));
}

#[test]
fn describe_config_file_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("model.cfg");
    fs::write(&good, "preset = conformer-s\n# twelve layers at x4\nvocab_size = 257\n").unwrap();
    let o = uconv(&["describe", "--config", s(&good)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("model: model"));

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "policy = x4-x6\n").unwrap();
    let o = uconv(&["describe", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("line 1: invalid reduction policy"),
        "{}",
        stderr(&o)
    );

    let bad = dir.path().join("typo.cfg");
    fs::write(&bad, "policy = x4\nheads = 4\nhedas = 2\n").unwrap();
    let o = uconv(&["describe", "--config", s(&bad)]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let o = uconv(&["describe", "--config", s(&dir.path().join("missing.cfg"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(
        uconv(&["describe", "--preset", "toy", "--bogus"]).status.code(),
        Some(1)
    );
    assert_eq!(uconv(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(uconv(&["describe"]).status.code(), Some(1));
    assert_eq!(uconv(&["check", "--suite", "nope"]).status.code(), Some(1));
    for sub in ["describe", "bench", "train-toy", "decode", "check", "synth-data"] {
        let o = uconv(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage"));
    }
}

#[test]
fn unknown_preset_is_a_validation_error() {
    let o = uconv(&["describe", "--preset", "conformer-xl"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_decode_reproduces_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = uconv(&["synth-data", "--out", s(&data), "--seed", "42"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ckpt = dir.path().join("toy.ckpt");
    let o = uconv(&[
        "train-toy",
        "--preset",
        "toy",
        "--data",
        s(&data),
        "--steps",
        "300",
        "--seed",
        "42",
        "--out",
        s(&ckpt),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("train greedy: 5/5 exact, WER 0.00%"), "{out}");
    assert!(out.contains("0 dropped"));

    let trace = fs::read_to_string(dir.path().join("toy.loss.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "step,lr,loss");
    assert_eq!(lines.len(), 301);
    assert!(lines[1..]
        .iter()
        .all(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap().is_finite()));

    let vocab = data.join("vocab.txt");
    for i in 0..5 {
        let input = data.join(format!("utt{i:03}.feat"));
        let expected = fs::read_to_string(data.join(format!("utt{i:03}.txt"))).unwrap();
        let beam = uconv(&[
            "decode",
            "--model",
            s(&ckpt),
            "--input",
            s(&input),
            "--vocab",
            s(&vocab),
        ]);
        assert_eq!(beam.status.code(), Some(0), "{}", stderr(&beam));
        assert_eq!(stdout(&beam).trim(), expected.trim());
        let greedy = uconv(&[
            "decode",
            "--model",
            s(&ckpt),
            "--input",
            s(&input),
            "--vocab",
            s(&vocab),
            "--beam",
            "1",
        ]);
        assert_eq!(stdout(&greedy), stdout(&beam));
    }

    let silence = dir.path().join("silence.feat");
    write_feat(
        &silence,
        &FeatureMatrix::new(Tensor::zeros(&[60, FEATURE_DIM])).unwrap(),
    )
    .unwrap();
    let a = uconv(&[
        "decode",
        "--model",
        s(&ckpt),
        "--input",
        s(&silence),
        "--vocab",
        s(&vocab),
    ]);
    let b = uconv(&[
        "decode",
        "--model",
        s(&ckpt),
        "--input",
        s(&silence),
        "--vocab",
        s(&vocab),
    ]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));

    let small = dir.path().join("small.txt");
    fs::write(&small, "<blank>\na\nb\n").unwrap();
    let o = uconv(&[
        "decode",
        "--model",
        s(&ckpt),
        "--input",
        s(&silence),
        "--vocab",
        s(&small),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("vocabulary has 3 entries but the model emits 10"));
}

#[test]
fn zero_steps_write_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        uconv(&["synth-data", "--out", s(&data), "--count", "2"]).status.code(),
        Some(0)
    );
    let ckpt = dir.path().join("init.ckpt");
    let o = uconv(&[
        "train-toy",
        "--preset",
        "toy",
        "--data",
        s(&data),
        "--steps",
        "0",
        "--seed",
        "9",
        "--out",
        s(&ckpt),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let saved = read_checkpoint::<f64>(&ckpt).unwrap();
    let fresh = Encoder::build(&EncoderConfig::toy(10), 9).unwrap();
    assert_eq!(saved.to_checkpoint(), fresh.to_checkpoint());
    assert_eq!(fs::read(&ckpt).unwrap(), fresh.to_checkpoint());
}

#[test]
fn train_reports_file_errors_and_infeasible_utterances() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("x.ckpt");
    let o = uconv(&[
        "train-toy",
        "--preset",
        "toy",
        "--data",
        s(&dir.path().join("nowhere")),
        "--vocab",
        s(&dir.path().join("v.txt")),
        "--steps",
        "1",
        "--out",
        s(&ckpt),
    ]);
    assert_eq!(o.status.code(), Some(3));

    let data = dir.path().join("data");
    assert_eq!(
        uconv(&["synth-data", "--out", s(&data), "--count", "2"]).status.code(),
        Some(0)
    );
    let o = uconv(&[
        "train-toy",
        "--preset",
        "toy",
        "--data",
        s(&data.join("missing.tsv")),
        "--vocab",
        s(&data.join("vocab.txt")),
        "--steps",
        "1",
        "--out",
        s(&ckpt),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("missing.tsv"));

    let long = data.join("long.txt");
    fs::write(&long, "t1 t2 t3 t4 t5 t6 t7 t8 t9 t1 t2 t3 t4 t5 t6 t7\n").unwrap();
    let mut manifest = fs::read_to_string(data.join("manifest.tsv")).unwrap();
    manifest.push_str("utt000.feat\tlong.txt\n");
    fs::write(data.join("manifest.tsv"), manifest).unwrap();
    let o = uconv(&[
        "train-toy",
        "--preset",
        "toy",
        "--data",
        s(&data),
        "--steps",
        "2",
        "--out",
        s(&ckpt),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("3 loaded, 1 dropped as infeasible"),
        "{}",
        stdout(&o)
    );
    assert!(stdout(&o).contains("dropped utterance 2"));
}

#[test]
fn check_suites_report_and_exit_zero() {
    let o = uconv(&["check", "--suite", "lengths"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("ok  ") && !out.contains("FAIL"));
    let o = uconv(&["check", "--suite", "feasibility"]);
    assert_eq!(o.status.code(), Some(0));
    let o = uconv(&["check", "--suite", "oracle"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("200"));
}

#[test]
fn bench_writes_csv_and_enforces_single_thread() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, "preset = toy\npolicy = x4\nlayers = 2\n").unwrap();
    let csv = dir.path().join("report.csv");
    let o = uconv(&[
        "bench",
        "--baseline",
        "toy",
        "--candidate",
        s(&cfg),
        "--seconds",
        "2",
        "--repeats",
        "5",
        "--out",
        s(&csv),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("| small |"));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "model,params,policy,layers,median_ms,mean_ms,std_ms,delta_vs_baseline_pct"
    );
    assert!(lines[1].starts_with("toy,") && lines[1].ends_with(",0.00"));
    assert!(lines[2].starts_with("small,") && lines[2].contains(",x4,2,"));

    let o = uconv(&[
        "bench",
        "--baseline",
        "toy",
        "--candidate",
        "toy",
        "--threads",
        "4",
        "--seconds",
        "1",
        "--repeats",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("single-threaded"));
    let o = uconv(&["bench", "--baseline", "toy", "--candidate", "toy", "--repeats", "3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = uconv(&["bench", "--baseline", "toy", "--candidate", "nothing-here"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn decode_reads_wav_input() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    fs::write(
        &ckpt,
        Encoder::build(&EncoderConfig::toy(3), 1).unwrap().to_checkpoint(),
    )
    .unwrap();
    let vocab = dir.path().join("v.txt");
    fs::write(&vocab, "<blank>\na\nb\n").unwrap();
    let wav = dir.path().join("tone.wav");
    let samples = (0..16_000).map(|n| 0.3 * (n as f64 * 0.2).sin()).collect();
    uconv::audio::write_wav(&wav, &uconv::audio::AudioBuffer::new(samples, 16_000).unwrap()).unwrap();
    let o = uconv(&[
        "decode",
        "--model",
        s(&ckpt),
        "--input",
        s(&wav),
        "--vocab",
        s(&vocab),
        "--beam",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let garbage = dir.path().join("g.feat");
    fs::write(&garbage, b"nope").unwrap();
    let o = uconv(&[
        "decode",
        "--model",
        s(&ckpt),
        "--input",
        s(&garbage),
        "--vocab",
        s(&vocab),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let o = uconv(&[
        "decode",
        "--model",
        s(&garbage),
        "--input",
        s(&garbage),
        "--vocab",
        s(&vocab),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
