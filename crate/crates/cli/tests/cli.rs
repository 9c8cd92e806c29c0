use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use kprox::data::{make_toy_regression, SplitSpec, Standardizer};
use kprox::train::{ModelBundle, Splits, TrainConfig};
use serde_json::Value;

fn kprox(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kprox"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> Output {
    let o = kprox(args, out);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

fn assert_manifest_complete(dir: &Path) {
    let m = json(&dir.join("manifest.json"));
    let outputs = m["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for rel in outputs {
        assert!(dir.join(rel.as_str().unwrap()).is_file(), "{rel} missing");
    }
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

const SMALL_DEMO: [&str; 3] = ["--set", "particles=100", "--set=reference_samples=5000"];

#[test]
fn gradcheck_passes_and_reports_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ok(&["gradcheck"], tmp.path());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(!stdout.contains("FAIL"));
    let checks = json(&tmp.path().join("metrics.json"));
    let checks = checks.as_array().unwrap();
    assert_eq!(checks.len(), 9);
    for c in checks {
        assert!(c["max_relative_error"].as_f64().unwrap() <= c["tolerance"].as_f64().unwrap());
        assert!(c["instances"].as_u64().unwrap() >= 20);
    }
    assert_manifest_complete(tmp.path());
}

#[test]
fn gradcheck_detects_corrupted_gradient() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kprox(&["gradcheck", "--corrupt", "rbf_kernel"], tmp.path());
    assert!(!o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    let line = stdout.lines().find(|l| l.starts_with("rbf_kernel")).unwrap();
    assert!(line.ends_with("FAIL"), "{line}");
    assert!(!kprox(&["gradcheck", "--corrupt", "nothing"], tmp.path()).status.success());
}

#[test]
fn demo_with_zero_step_keeps_w2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["demo-posterior", "--set", "epsilon=0"];
    args.extend(SMALL_DEMO);
    ok(&args, tmp.path());
    for init in ["gaussian", "uniform"] {
        let text = fs::read_to_string(tmp.path().join(format!("w2_{init}.csv"))).unwrap();
        let values: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
        assert_eq!(values.len(), 21);
        assert!(values.iter().all(|v| *v == values[0]));
    }
}

#[test]
fn demo_default_halves_w2_and_repeats_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["demo-posterior"], a.path());
    ok(&["demo-posterior"], b.path());
    let summary = json(&a.path().join("metrics.json"));
    for run in summary.as_array().unwrap() {
        let (w0, w1) = (run["initial_w2"].as_f64().unwrap(), run["final_w2"].as_f64().unwrap());
        assert!(w1 < 0.5 * w0, "{run}");
    }
    for init in ["gaussian", "uniform"] {
        for kind in ["trajectory", "w2", "kde"] {
            let rel = format!("{kind}_{init}.csv");
            assert_eq!(read(a.path(), &rel), read(b.path(), &rel), "{rel}");
        }
    }
    assert_eq!(read(a.path(), "metrics.json"), read(b.path(), "metrics.json"));
    assert_manifest_complete(a.path());
}

#[test]
fn zero_epochs_saves_untrained_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["train", "--epochs", "0", "--seed", "4"], tmp.path());
    let saved = ModelBundle::load(tmp.path().join("bundle.json")).unwrap();
    let cfg = TrainConfig {
        epochs_generative: 0,
        epochs_inference: 0,
        seed: 4,
        ..TrainConfig::preset("desk").unwrap()
    };
    let raw = make_toy_regression(4, 500).unwrap();
    let splits = Splits::chronological(&raw, &SplitSpec::default()).unwrap();
    let fresh = ModelBundle::init(&cfg, raw.n_features(), Standardizer::fit(&splits.train).unwrap()).unwrap();
    assert_eq!(saved, fresh);
    let m = json(&tmp.path().join("metrics.json"));
    assert!(m["test_original"]["rmse"].as_f64().unwrap().is_finite());
    assert_eq!(m["best_epoch"], 0);
}

#[test]
fn toy_desk_training_is_quick_and_finite() {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    ok(&["train", "--dataset", "toy", "--preset", "desk"], tmp.path());
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "{elapsed:?}");
    let m = json(&tmp.path().join("metrics.json"));
    for space in ["test_standardized", "test_original"] {
        for key in ["r2", "rmse", "mae"] {
            assert!(m[space][key].as_f64().unwrap().is_finite(), "{space}.{key}");
        }
    }
    let logs = fs::read_to_string(tmp.path().join("logs/train.csv")).unwrap();
    assert_eq!(logs.lines().count(), 1 + 50 + 50);
    assert_manifest_complete(tmp.path());
}

#[test]
fn single_value_sweep_matches_train() {
    let (t, s) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(&["train", "--preset", "smoke", "--set", "kprox_epsilon=0.05"], t.path());
    ok(&["sweep", "--preset", "smoke", "--param", "epsilon", "--values", "0.05"], s.path());
    let train = json(&t.path().join("metrics.json"));
    let sweep = json(&s.path().join("metrics.json"));
    assert_eq!(sweep[0]["metrics"], train);
    assert_eq!(read(t.path(), "logs/train.csv"), read(s.path(), "logs/sweep_0.csv"));
}

#[test]
fn larger_sampler_step_helps_on_toy() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["sweep", "--preset", "smoke", "--param", "epsilon", "--values", "0.01,0.1"], tmp.path());
    let rows = json(&tmp.path().join("metrics.json"));
    let r2 = |i: usize| rows[i]["metrics"]["test_standardized"]["r2"].as_f64().unwrap();
    assert!(r2(1) >= r2(0), "R2 at 0.1: {}, at 0.01: {}", r2(1), r2(0));
    let csv = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2);
}

#[test]
fn sweep_records_failures_and_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kprox(
        &["sweep", "--preset", "smoke", "--epochs", "1", "--param", "particles", "--values", "0,3"],
        tmp.path(),
    );
    assert!(!o.status.success());
    let csv = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("particles,0,error"));
    assert!(rows[1].starts_with("particles,3,ok"));
    assert!(kprox(&["sweep", "--param", "hidden", "--values", "1"], tmp.path()).status.code() != Some(0));
}

#[test]
fn ablation_has_three_rows_and_repeats() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["ablate", "--preset", "smoke", "--seed", "2"];
    ok(&args, a.path());
    ok(&args, b.path());
    let csv = fs::read_to_string(a.path().join("ablation.csv")).unwrap();
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["full", "no_kprox", "no_wass"]);
    assert_eq!(read(a.path(), "ablation.csv"), read(b.path(), "ablation.csv"));
    assert_eq!(read(a.path(), "metrics.json"), read(b.path(), "metrics.json"));
    assert_manifest_complete(a.path());
}

#[test]
fn thread_count_does_not_change_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["train", "--preset", "smoke", "--epochs", "3"];
    ok(&args, a.path());
    let single = Command::new(env!("CARGO_BIN_EXE_kprox"))
        .args(args)
        .arg("--out")
        .arg(b.path())
        .env("KPROX_THREADS", "1")
        .status()
        .unwrap();
    assert!(single.success());
    assert_eq!(read(a.path(), "metrics.json"), read(b.path(), "metrics.json"));
    assert_eq!(read(a.path(), "bundle.json"), read(b.path(), "bundle.json"));
}

#[test]
fn config_file_and_nested_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("cfg.json");
    fs::write(&cfg_path, r#"{"particles": 4, "hidden": [6, 3]}"#).unwrap();
    let out = tmp.path().join("run");
    let cfg = cfg_path.to_str().unwrap();
    ok(
        &["train", "--preset", "smoke", "--epochs", "1", "--config", cfg, "--set", "kernel.bandwidth=median"],
        &out,
    );
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config"]["particles"], 4);
    assert_eq!(m["config"]["hidden"], serde_json::json!([6, 3]));
    assert_eq!(m["config"]["kernel"]["bandwidth"], "median");
    assert_eq!(m["config"]["batch_size"], 64);
    assert_eq!(m["config"]["epochs_generative"], 1);

    fs::write(&cfg_path, r#"{"partciles": 4}"#).unwrap();
    assert!(!kprox(&["train", "--config", cfg], &out).status.success());
    assert!(!kprox(&["train", "--set", "kernel.width=2"], &out).status.success());
}

#[test]
fn csv_dataset_loads() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = make_toy_regression(1, 120).unwrap();
    let path = tmp.path().join("toy.csv");
    let mut f = fs::File::create(&path).unwrap();
    kprox::data::write_table_csv(&mut f, &raw).unwrap();
    let spec = format!("csv:{}", path.display());
    ok(&["train", "--dataset", &spec, "--preset", "smoke", "--epochs", "1"], &tmp.path().join("run"));
    let missing = format!("csv:{}", tmp.path().join("absent.csv").display());
    let o = kprox(&["train", "--dataset", &missing], &tmp.path().join("bad"));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.csv"));
}
