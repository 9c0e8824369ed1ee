use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mssi(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mssi")).args(args).arg("--out").arg(out).output().expect("run mssi")
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes `classes` (one record each, ~`segments` segments) and featurizes them.
fn cache(dir: &Path, classes: &str, segments: usize, seed: &str) -> std::path::PathBuf {
    let duration = format!("{}", (segments * 2048) as f64 / 12_000.0 + 0.01);
    ok(mssi(&["synth", "--classes", classes, "--duration", &duration, "--seed", seed], &dir.join("raw")));
    ok(mssi(&["featurize", "--manifest", s(&dir.join("raw/manifest.json"))], &dir.join("feat")));
    dir.join("feat/features.mssi")
}

#[test]
fn synth_writes_one_file_per_record_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for d in ["a", "b"] {
        ok(mssi(
            &["synth", "--classes", "NM,OR", "--per-class", "3", "--duration", "0.5", "--seed", "4"],
            &dir.path().join(d),
        ));
    }
    let manifest: Value = serde_json::from_slice(&std::fs::read(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.as_array().unwrap().len(), 6);
    for name in ["NM-000", "NM-002", "OR-001"] {
        let a = std::fs::read(dir.path().join(format!("a/{name}.f64"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("b/{name}.f64"))).unwrap();
        assert_eq!(a.len(), 6000 * 8);
        assert_eq!(a, b);
    }
}

#[test]
fn unknown_class_token_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = mssi(&["synth", "--classes", "NM,XX"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("XX"));
}

#[test]
fn featurize_reports_counts_and_segment_length() {
    let dir = tempfile::tempdir().unwrap();
    ok(mssi(&["synth", "--classes", "B,CA", "--duration", "1.0"], &dir.path().join("raw")));
    let o = ok(mssi(
        &["--json", "featurize", "--manifest", s(&dir.path().join("raw/manifest.json")), "--seg-len", "1024"],
        &dir.path().join("feat"),
    ));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    // 12000 samples / 1024 = 11 segments per record
    assert_eq!(v["images"], 22);
    assert_eq!(v["seg_len"], 1024);
    assert_eq!(v["classes"][0]["class"], "B");
    assert_eq!(v["classes"][1]["images"], 11);
}

#[test]
fn missing_signal_file_names_its_record() {
    let dir = tempfile::tempdir().unwrap();
    ok(mssi(&["synth", "--classes", "NM,IR", "--duration", "0.5"], &dir.path().join("raw")));
    std::fs::remove_file(dir.path().join("raw/IR-000.f64")).unwrap();
    let o = mssi(&["featurize", "--manifest", s(&dir.path().join("raw/manifest.json"))], &dir.path().join("feat"));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("IR-000"));
    assert!(!dir.path().join("feat/features.mssi").exists());
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let features = cache(dir.path(), "NM,IR,OR", 10, "2");
    ok(mssi(&["train", "--cache", s(&features), "--epochs", "8", "--seed", "3"], &dir.path().join("run")));
    let history = std::fs::read_to_string(dir.path().join("run/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 9);
    assert!(history.starts_with("epoch,mean_loss,train_accuracy,test_accuracy\n"));

    let model = dir.path().join("run/model.msdn");
    let acc = |name: &str| -> f64 {
        let o = ok(mssi(
            &["--json", "eval", "--model", s(&model), "--cache", s(&dir.path().join("run").join(name))],
            &dir.path().join(format!("eval-{name}")),
        ));
        serde_json::from_slice::<Value>(&o.stdout).unwrap()["accuracy"].as_f64().unwrap()
    };
    assert!(acc("train.mssi") >= acc("test.mssi"));
    assert!(dir.path().join("eval-test.mssi/confusion.json").exists());

    let o = ok(mssi(
        &[
            "--json",
            "predict",
            "--model",
            s(&model),
            "--signal",
            s(&dir.path().join("raw/OR-000.f64")),
            "--class-names",
            "NM,IR,OR",
        ],
        &dir.path().join("pred"),
    ));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["majority"], "OR");
    assert!(dir.path().join("pred/predictions.json").exists());
}

#[test]
fn class_count_mismatch_fails_without_leaving_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let three = cache(&dir.path().join("three"), "NM,IR,OR", 4, "1");
    let two = cache(&dir.path().join("two"), "NM,IR", 4, "1");
    let out = dir.path().join("run");
    let o = mssi(&["train", "--cache", s(&three), "--test-cache", s(&two), "--epochs", "1"], &out);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("classes"));
    assert!(!out.join("model.msdn").exists());
}
