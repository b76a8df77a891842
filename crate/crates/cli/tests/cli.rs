use std::path::Path;
use std::process::{Command, Output};

fn cadenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cadenet"))
        .args(args)
        .env_remove("CADENET_CONFIG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, count: usize) {
    let out = cadenet(&["synth", "--out", dir.to_str().unwrap(), "--count", &count.to_string()]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = cadenet(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage: cadenet"));
}

#[test]
fn unknown_flag_suggests_the_close_match() {
    let out = cadenet(&["pipeline", "--frame", "30"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("--frame"), "{err}");
    assert!(err.contains("--frames"), "{err}");
}

#[test]
fn help_matches_golden_and_lists_defaults() {
    let out = cadenet(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = stdout(&out);
    let golden = include_str!("golden/help.txt");
    assert_eq!(help, golden);
    for needle in [
        "conf 0.25",
        "match IoU 0.5",
        "NMS IoU 0.45",
        "gate IoU 0.3",
        "spread 0.15",
        "clahe_clip 1.5",
        "kernel 15",
        "atm_pct 0.001",
        "k = 5",
        "30 fps",
        "10 warmup + 50 timed",
    ] {
        assert!(help.contains(needle), "missing {needle:?}");
    }
}

#[test]
fn out_of_range_value_is_usage_error() {
    let out = cadenet(&["pipeline", "--frames", "5", "--conf", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--conf"));
}

#[test]
fn missing_corpus_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent");
    let out = cadenet(&["benchmark", "--corpus", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn empty_corpus_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty");
    std::fs::create_dir(&corpus).unwrap();
    let out = cadenet(&["benchmark", "--corpus", corpus.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"fog": {"dcp_kernel": "wide"}}"#).unwrap();
    let out = cadenet(&["pipeline", "--frames", "3", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("dcp_kernel"), "{}", stderr(&out));
}

#[test]
fn config_is_read_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"rain": {"no_such_key": 1}}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cadenet"))
        .args(["pipeline", "--frames", "3"])
        .env("CADENET_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn enhance_reports_alpha_for_half_severity_fog() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 1);
    let input = dir.path().join("fog_0000.png");
    assert!(input.exists());
    let output = dir.path().join("out.png");
    let out = cadenet(&[
        "enhance",
        input.to_str().unwrap(),
        output.to_str().unwrap(),
        "--condition",
        "fog",
        "--severity",
        "0.5",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("alpha=0.70"), "{}", stdout(&out));
    assert!(output.exists());
}

#[test]
fn latency_reports_mean_and_std() {
    let out = cadenet(&["latency", "--op", "egnms", "--width", "160", "--height", "120"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let s = stdout(&out);
    assert!(s.starts_with("egnms: "), "{s}");
    assert!(s.contains("10 warmup + 50 timed"), "{s}");
    let out = cadenet(&["latency", "--op", "nms", "--cpu", "--width", "64", "--height", "64"]);
    assert!(stdout(&out).contains("5 warmup + 100 timed"));
}

#[test]
fn benchmark_writes_records_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    synth(&corpus, 6);
    let out_dir = dir.path().join("out");
    let out = cadenet(&["benchmark", "--corpus", corpus.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let records = std::fs::read_to_string(out_dir.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 12);
    for line in records.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["image", "variant", "tp", "fp", "fn", "p", "r", "f1", "flag"] {
            assert!(v.get(key).is_some(), "{key} missing in {line}");
        }
    }
    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("fog"));
    assert!(summary.contains("recall"));
}

#[test]
fn pipeline_log_is_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let p = dir.path().join(name);
        let out = cadenet(&["pipeline", "--frames", "40", "--dim", "64", "--out", p.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        std::fs::read_to_string(p).unwrap()
    };
    let a = run("a.csv");
    assert!(!a.is_empty());
    assert_eq!(a, run("b.csv"));
}
