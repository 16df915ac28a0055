use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use flowline::io::{read_long_csv, read_series_csv, write_series_csv};
use flowline::simulation::{generate_observations, StudySettings, TruthProfile};

fn flowline(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowline"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

/// Writes exact observations of the built-in truth (generated with `true_a`)
/// and a config pointing at them.
fn exact_case(dir: &Path, n_train: usize, true_a: f64, extra: &str) -> std::path::PathBuf {
    let truth = TruthProfile::builtin(1000.0).unwrap();
    let obs = generate_observations(&truth, n_train, 0.0, true_a, 1, &StudySettings::default()).unwrap();
    write_series_csv(dir.join("h.csv"), &obs.thickness).unwrap();
    write_series_csv(dir.join("v.csv"), &obs.velocity).unwrap();
    write_series_csv(dir.join("e.csv"), &obs.elevation).unwrap();
    write_series_csv(dir.join("a.csv"), &obs.accumulation).unwrap();
    write_series_csv(dir.join("t.csv"), &obs.thinning).unwrap();
    for (n, s) in &obs.width_candidates {
        write_series_csv(dir.join(format!("w_{n}.csv")), s).unwrap();
    }
    let cfg = format!(
        r#"seed = 21
output_dir = "out"

[inputs]
thickness = "h.csv"
velocity = "v.csv"
elevation = "e.csv"
accumulation = "a.csv"
thinning = "t.csv"
widths = {{ narrow = "w_narrow.csv", wide = "w_wide.csv" }}

[grid]
domain_length = {}
prediction_spacing = 25000.0

[smoothing]
velocity = {{ kind = "none" }}
elevation = {{ kind = "none" }}
accumulation = {{ kind = "none" }}
thinning = {{ kind = "none" }}
{extra}"#,
        truth.domain_length
    );
    let p = dir.join("run.toml");
    fs::write(&p, cfg).unwrap();
    p
}

#[test]
fn naive_with_zero_a_recovers_exact_thickness() {
    let dir = tempfile::tempdir().unwrap();
    exact_case(dir.path(), 10, 0.0, "");
    let out = flowline(&["--config", "run.toml", "naive", "--A", "0", "--width", "narrowest"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_long_csv(dir.path().join("out/naive.csv")).unwrap();
    let truth = read_series_csv(dir.path().join("h.csv")).unwrap();
    let fitted: Vec<_> = rows.iter().filter(|r| r.statistic == "A=0.0").collect();
    assert_eq!(fitted.len(), truth.len());
    for (r, h) in fitted.iter().zip(&truth.values) {
        assert!((r.value - h).abs() < 1e-3, "{} vs {h}", r.value);
    }
}

#[test]
fn fit_then_predict_share_the_sample_file() {
    let dir = tempfile::tempdir().unwrap();
    exact_case(dir.path(), 5, 1e-18, "\n[chain]\nn_iterations = 300\nn_chains = 2\nretained_per_chain = 40\n");
    let out = flowline(&["--config", "run.toml", "fit"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let sha = manifest["files"]["samples.csv"].as_str().unwrap().to_string();

    let out = flowline(&["--config", "run.toml", "predict"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pred: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/prediction.json")).unwrap()).unwrap();
    assert_eq!(pred["samples_sha256"].as_str().unwrap(), sha);
    let rows = read_long_csv(dir.path().join("out/prediction.csv")).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.quantity == "thickness"));

    let out = flowline(&["--config", "run.toml", "diagnose", "--samples", "out/samples.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(dir.path().join("out/config.toml")).unwrap(),
        fs::read(dir.path().join("run.toml")).unwrap()
    );
}

#[test]
fn simulate_replays_bitwise_from_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--n-train",
        "5",
        "--noise-sd",
        "50",
        "--seed",
        "7",
        "--iterations",
        "400",
        "--output-dir",
        "first",
    ];
    let out = flowline(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();

    let out = flowline(
        &["--config", "first/resolved.toml", "--output-dir", "second", "simulate"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let second: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(first, second);
    let files = first["files"].as_object().unwrap();
    assert!(files.contains_key("cell_n5_sd50/samples.csv"));
    for name in files.keys() {
        assert_eq!(
            fs::read(dir.path().join("first").join(name)).unwrap(),
            fs::read(dir.path().join("second").join(name)).unwrap(),
            "{name}"
        );
    }

    let out = flowline(
        &["--config", "first/resolved.toml", "--output-dir", "cov", "coverage", "--samples", "first/cell_n5_sd50/samples.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cov: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("cov/coverage.json")).unwrap()).unwrap();
    let w = cov["width_coverage"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&w));
}

#[test]
fn usage_errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = flowline(&["fit", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");

    let out = flowline(&["fit"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");

    fs::write(dir.path().join("bad.toml"), "seed = 1\nunknown = 3\n").unwrap();
    let out = flowline(&["--config", "bad.toml", "fit"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");
}

#[test]
fn runtime_errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = flowline(&["--seed", "1", "diagnose", "--samples", "missing.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "io");

    fs::write(dir.path().join("s.csv"), "chain,iter,A\n").unwrap();
    let out = flowline(&["--seed", "1", "diagnose", "--samples", "s.csv"], dir.path());
    assert_eq!(error_json(&out)["error"]["kind"], "parse");
}
