use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn toc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toc"))
        .args(args)
        .env_remove("TOC_CONFIG")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn generate_small(dir: &Path) -> String {
    let data = dir.join("data.jsonl");
    let data = data.to_str().unwrap().to_string();
    let out = toc(&["generate", "--sessions-per-fault", "3", "--seed", "7", "--out", &data]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(toc(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(toc(&["generate", "--bogus"]).status.code(), Some(1));
    assert_eq!(toc(&["generate"]).status.code(), Some(1));
    assert_eq!(toc(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"schema_version\": \"1\"").unwrap();
    let out = toc(&["--config", bad.to_str().unwrap(), "baseline"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = toc(&["simulate", "--data", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_reports_counts_and_writes_splits() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_small(dir.path());
    let lines = fs::read_to_string(&data).unwrap().lines().count();
    assert!(lines > 0 && lines <= 60);
    let splits: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(&fs::read(dir.path().join("splits.json")).unwrap()).unwrap();
    assert_eq!(splits.len(), lines);

    let again = dir.path().join("again.jsonl");
    let out = toc(&["generate", "--sessions-per-fault", "3", "--seed", "7", "--out", again.to_str().unwrap()]);
    assert!(stdout(&out).contains("generated 60 sessions"));
    assert_eq!(fs::read(&data).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn train_twice_gives_identical_checkpoints_and_eval_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_small(dir.path());
    let ckpt = |name: &str| {
        let path = dir.path().join(name);
        let out = toc(&[
            "train", "--data", &data, "--out", path.to_str().unwrap(), "--seed", "1", "--epochs", "2", "--hidden", "8",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(path).unwrap()
    };
    assert_eq!(ckpt("a.ckpt"), ckpt("b.ckpt"));

    let report_dir = dir.path().join("report");
    let out = toc(&[
        "eval",
        "--model",
        dir.path().join("a.ckpt").to_str().unwrap(),
        "--data",
        &data,
        "--out-dir",
        report_dir.to_str().unwrap(),
        "--start-buckets",
        "2,4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(report_dir.join("report.json")).unwrap()).unwrap();
    assert!(report["success_rate"].is_number());
    assert_eq!(report["autonomous"].as_array().unwrap().len(), 20);
    let csv = fs::read_to_string(report_dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
}

#[test]
fn baseline_rejects_too_few_trials() {
    let out = toc(&["baseline", "--trials", "5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_replays_reference_path() {
    let out = toc(&["simulate", "--fault", "driving_slow", "--seed", "4"]);
    assert!(out.status.success());
    let line: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(line["resolved"], true);

    let dir = tempfile::tempdir().unwrap();
    let data = generate_small(dir.path());
    let out = toc(&["simulate", "--data", &data]);
    assert!(out.status.success());
    assert!(stdout(&out).contains(", 0 replay mismatches"));
}
