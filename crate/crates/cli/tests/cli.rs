use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn misspec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_misspec")).args(args).output().expect("binary runs")
}

fn outputs(out: &Output) -> Vec<String> {
    String::from_utf8(out.stdout.clone()).unwrap().lines().map(str::to_string).collect()
}

fn dir_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_ten_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = misspec(&[
        "simulate",
        "--preset",
        "negative-reinforcement",
        "--seeds",
        "0..10",
        "--horizon",
        "500",
        "--out",
        dir_arg(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files = outputs(&out);
    assert_eq!(files.len(), 11);
    assert_eq!(files.iter().filter(|f| f.ends_with(".csv")).count(), 10);
    assert!(files[10].ends_with("manifest.json"));
    let header = fs::read_to_string(&files[0]).unwrap();
    assert!(header.starts_with("t,action,consequence,sigma_x1,sigma_x2"));
    let env: misspec::f64::Environment = misspec::presets::environment("negative-reinforcement").unwrap();
    for f in &files[..10] {
        let steps = misspec::simulate::read_trajectory_csv(&env, fs::File::open(f).unwrap()).unwrap();
        assert_eq!(steps.len(), 500);
    }
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let first = tempfile::tempdir().unwrap();
    let out = misspec(&[
        "simulate",
        "--preset",
        "triangle",
        "--seeds",
        "3,4",
        "--horizon",
        "2000",
        "--record-every",
        "10",
        "--out",
        dir_arg(first.path()),
    ]);
    assert!(out.status.success());
    let manifest = first.path().join("manifest.json");
    let second = tempfile::tempdir().unwrap();
    let again = misspec(&["simulate", "--config", manifest.to_str().unwrap(), "--out", dir_arg(second.path())]);
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    for name in ["trajectory_seed3.csv", "trajectory_seed4.csv"] {
        let a = fs::read(first.path().join(name)).unwrap();
        let b = fs::read(second.path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn di_path_records_switches() {
    let dir = tempfile::tempdir().unwrap();
    let out = misspec(&["di", "--preset", "robust-counterexample-base", "--horizon", "3", "--out", dir_arg(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("di_path_0.csv")).unwrap();
    let path: misspec::f64::DIPath = misspec::inclusion::read_path_csv(3, "fixed", text.as_bytes()).unwrap();
    assert_eq!(path.times.first(), Some(&0.0));
    assert_eq!(path.times.last(), Some(&3.0));
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let events: Vec<[f64; 3]> = rdr
        .records()
        .map(|r| r.unwrap())
        .filter(|r| &r[4] == "1")
        .map(|r| [r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap()])
        .collect();
    let near = |p: [f64; 3]| events.iter().any(|e| (0..3).all(|i| (e[i] - p[i]).abs() < 1e-3));
    assert!(near([1.0 / 3.0, 0.5, 1.0 / 6.0]));
    assert!(near([2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0]));
    assert!(near([5.0 / 12.0, 0.25, 1.0 / 3.0]));
}

#[test]
fn classify_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = misspec(&["classify", "--preset", "one-dimensional", "--out", dir_arg(dir.path())]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("classify.json")).unwrap()).unwrap();
    let models = report["models"].as_array().unwrap();
    let got: Vec<(f64, &str)> =
        models.iter().map(|m| (m["theta"].as_f64().unwrap(), m["class"].as_str().unwrap())).collect();
    assert_eq!(got.len(), 3);
    let want = [(0.0, "attracting_model"), (1.0 / 3.0, "repelling_model"), (2.0 / 3.0, "attracting_model")];
    for ((t, c), (wt, wc)) in got.iter().zip(want) {
        assert!((t - wt).abs() < 1e-9);
        assert_eq!(*c, wc);
    }
}

#[test]
fn toml_config_gives_toml_reports() {
    let dir = tempfile::tempdir().unwrap();
    let preset = misspec(&["preset", "negative-reinforcement", "--format", "toml"]);
    assert!(preset.status.success());
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, &preset.stdout).unwrap();
    let out_dir = dir.path().join("out");
    let out = misspec(&["equilibria", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(out_dir.join("equilibria.toml")).unwrap();
    let doc: toml::Value = toml::from_str(&report).unwrap();
    let eqs = doc["equilibria"].as_array().unwrap();
    assert_eq!(eqs.len(), 1);
    assert_eq!(eqs[0]["attracting"]["verdict"].as_str(), Some("Attracting"));
    assert!(out_dir.join("manifest.toml").exists());
}

#[test]
fn structured_errors() {
    let out = misspec(&["simulate", "--preset", "no-such"]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "unknown_preset");
    let out = misspec(&["di"]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "invalid_argument");
}

#[test]
fn thread_cap_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_misspec"))
        .args(["simulate", "--preset", "negative-reinforcement", "--horizon", "10", "--out", dir_arg(dir.path())])
        .env("MISSPEC_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let ok = Command::new(env!("CARGO_BIN_EXE_misspec"))
        .args(["simulate", "--preset", "negative-reinforcement", "--horizon", "10", "--out", dir_arg(dir.path())])
        .env("MISSPEC_THREADS", "1")
        .output()
        .unwrap();
    assert!(ok.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["threads"], 1);
}
