use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

fn driftsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftsel")).args(args).output().expect("binary runs")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn fixture(name: &str) -> String {
    fixtures().join(name).to_str().unwrap().to_string()
}

fn data_rows(text: &str) -> usize {
    text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).count()
}

/// A small model trained once and shared by the tests that need one.
fn tiny_model() -> &'static Path {
    static MODEL: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    let (_, path) = MODEL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.tsc");
        let out = driftsel(&[
            "tsc-train",
            "--out",
            path.to_str().unwrap(),
            "--samples-per-class",
            "100",
            "--epochs",
            "2",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (dir, path)
    });
    path
}

#[test]
fn simulate_writes_one_row_per_generation() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.tsv");
    let b = dir.path().join("b.tsv");
    for path in [&a, &b] {
        let out = driftsel(&[
            "simulate", "--n", "100", "--s", "0", "--x0", "0.5", "--t", "100", "--seed", "1", "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(data_rows(&text), 101);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn simulate_accepts_negative_selection() {
    let out = driftsel(&["simulate", "--n", "50", "--s", "-0.1", "--x0", "0.5", "--t", "5"]);
    assert!(out.status.success());
    assert_eq!(data_rows(&String::from_utf8(out.stdout).unwrap()), 6);
}

#[test]
fn bad_flags_exit_two() {
    let cases: [&[&str]; 4] = [
        &["simulate", "--n", "100", "--s", "-2", "--x0", "0.5", "--t", "10"],
        &["simulate", "--n", "1", "--s", "0", "--x0", "0.5", "--t", "10"],
        &["simulate", "--n", "100", "--s", "0", "--t", "10"],
        &["no-such-command"],
    ];
    for args in cases {
        assert_eq!(driftsel(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn tiny_training_run_is_fast_and_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.tsc");
    let start = Instant::now();
    let out = driftsel(&[
        "tsc-train",
        "--out",
        model.to_str().unwrap(),
        "--samples-per-class",
        "100",
        "--epochs",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed() < Duration::from_secs(60));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("m.tsc.metrics.json")).unwrap()).unwrap();
    let acc = metrics["validation_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(fs::read_to_string(&model).unwrap().starts_with("DRIFTSEL-TSC 1\n"));
}

#[test]
fn inverted_population_range_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.tsc");
    let out = driftsel(&["tsc-train", "--out", model.to_str().unwrap(), "--n-min", "5000", "--n-max", "100"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!model.exists());
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let out = driftsel(&[
        "ingest",
        "--eebo",
        &fixture("eebo.tsv"),
        "--coha",
        &fixture("coha.tsv"),
        "--gbooks",
        &fixture("gbooks.tsv"),
        "--intransitive",
        &fixture("intransitive.txt"),
        "--out",
        &d("ingest"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("ingest/targets.txt")).unwrap(), "surge\nwander\n");

    let counts = d("ingest/merged_counts.tsv");
    let out = driftsel(&["bin", "--counts", &counts, "--verb", "surge", "--verb", "wander", "--out", &d("series.tsv")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = driftsel(&["fit", "--series", &d("series.tsv")]);
    assert!(out.status.success());
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.starts_with("verb\tk\tt_stat\tp_value\tcohens_d\tpower\tverdict\n"));
    assert_eq!(report.lines().count(), 3);

    let out = driftsel(&["classify", "--model", tiny_model().to_str().unwrap(), "--series", &d("series.tsv")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = String::from_utf8(out.stdout).unwrap();
    for line in report.lines().skip(1) {
        let p: f64 = line.split('\t').nth(2).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn pipeline_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let model = tiny_model().to_str().unwrap();
    let args =
        ["pipeline", "--config", &fixture("pipeline.toml"), "--out", out_dir.to_str().unwrap(), "--model", model];
    let first = driftsel(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let names = ["classification.tsv", "fit_report.tsv", "manifest.json", "merged_counts.tsv", "series/surge.tsv"];
    let before: Vec<Vec<u8>> = names.iter().map(|n| fs::read(out_dir.join(n)).unwrap()).collect();
    assert!(driftsel(&args).status.success());
    let after: Vec<Vec<u8>> = names.iter().map(|n| fs::read(out_dir.join(n)).unwrap()).collect();
    assert_eq!(before, after);
    assert!(!out_dir.join(".driftsel.lock").exists());
}

#[test]
fn pipeline_failures_use_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let model = tiny_model().to_str().unwrap();
    let config = fixture("pipeline.toml");
    let base = ["pipeline", "--config", &config, "--out", out_dir.to_str().unwrap(), "--model", model];

    let mut none_left = base.to_vec();
    none_left.extend(["--set", "min_count=1000000"]);
    let out = driftsel(&none_left);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no target verbs"));

    let mut bad_key = base.to_vec();
    bad_key.extend(["--set", "no_such_key=1"]);
    assert_eq!(driftsel(&bad_key).status.code(), Some(2));

    let mut bad_alpha = base.to_vec();
    bad_alpha.extend(["--set", "alpha=2"]);
    assert_eq!(driftsel(&bad_alpha).status.code(), Some(2));
}
