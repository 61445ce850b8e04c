//! Runs the `ratemill` binary end to end on a small synthetic cohort.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ratemill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ratemill"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn run_ok(args: &[&str]) -> Output {
    let out = ratemill(args);
    assert_eq!(
        code(&out),
        0,
        "{args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn output_digests(manifest: &Path) -> Vec<String> {
    read_json(manifest)["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["sha256"].as_str().unwrap().to_string())
        .collect()
}

fn synth(dir: &Path, seed: &str) -> PathBuf {
    let cfg = dir.join("gen.json");
    std::fs::write(&cfg, r#"{"n_companies":3000,"emit_cr":true}"#).unwrap();
    let out = dir.join("syn");
    run_ok(&["synth", "--config", s(&cfg), "--seed", seed, "--out", s(&out)]);
    out
}

#[test]
fn full_chain_runs_and_every_step_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let syn = synth(d, "5");
    for f in ["snapshots.csv", "labels.csv", "prior.csv", "cr_lines.csv", "phenomena.csv", "statuses.csv", "manifest.json"] {
        assert!(syn.join(f).exists(), "synth did not write {f}");
    }

    let splits = d.join("splits");
    run_ok(&[
        "ingest",
        "--input",
        s(&syn.join("snapshots.csv")),
        "--labels",
        s(&syn.join("labels.csv")),
        "--prior",
        s(&syn.join("prior.csv")),
        "--out",
        s(&splits),
    ]);
    run_ok(&["features", "--input", s(&splits), "--out", s(&splits)]);
    assert!(splits.join("featurizer.json").exists());

    let model = d.join("model.json");
    run_ok(&["train", "--data", s(&splits), "--out", s(&model)]);
    run_ok(&["calibrate", "--model", s(&model), "--data", s(&splits.join("test_oos.csv")), "--out", s(&model)]);
    assert!(read_json(&model)["calibration"].is_object());
    assert!(d.join("model.reliability_after.csv").exists());

    let oos = d.join("oos_scores.csv");
    let oot = d.join("oot_scores.csv");
    run_ok(&["score", "--model", s(&model), "--input", s(&splits.join("test_oos.csv")), "--out", s(&oos)]);
    run_ok(&["score", "--model", s(&model), "--input", s(&splits.join("test_oot.csv")), "--out", s(&oot)]);

    let scale = d.join("scale.json");
    run_ok(&["bins", "--scores", s(&oos), "--k", "4", "--out", s(&scale)]);
    let v = ratemill(&["validate-scale", "--scale", s(&scale), "--oot", s(&oot)]);
    assert!(matches!(code(&v), 0 | 1));
    assert!(d.join("scale.validation.csv").exists());

    let explain = d.join("explain");
    run_ok(&["explain", "--model", s(&model), "--input", s(&splits.join("test_oot.csv")), "--out", s(&explain)]);
    assert!(explain.join("shap_summary.csv").exists());
    assert!(explain.join("importance.csv").exists());

    let mapped = d.join("mapped.csv");
    run_ok(&[
        "map-cr",
        "--lines",
        s(&syn.join("cr_lines.csv")),
        "--phenomena",
        s(&syn.join("phenomena.csv")),
        "--lookups",
        s(&syn.join("lookups")),
        "--out",
        s(&mapped),
    ]);
    assert!(d.join("mapped.mapping_report.json").exists());

    let report = d.join("mapping_report.csv");
    let vm = ratemill(&[
        "validate-mapping",
        "--bureau",
        s(&syn.join("snapshots.csv")),
        "--mapped",
        s(&mapped),
        "--out",
        s(&report),
    ]);
    assert!(matches!(code(&vm), 0 | 1), "{}", String::from_utf8_lossy(&vm.stderr));
    assert!(report.exists());

    let bt = run_ok(&[
        "backtest",
        "--model",
        s(&model),
        "--snapshots",
        s(&syn.join("snapshots.csv")),
        "--statuses",
        s(&syn.join("statuses.csv")),
    ]);
    let parsed: Value = serde_json::from_slice(&bt.stdout).expect("backtest prints JSON");
    assert!(parsed.is_object());

    // a scale whose class PDs are far too low must fail validation
    let mut bad = read_json(&scale);
    let k = bad["class_pd"].as_array().unwrap().len();
    bad["class_pd"] = Value::from(vec![1e-6; k]);
    let bad_path = d.join("bad_scale.json");
    std::fs::write(&bad_path, serde_json::to_string(&bad).unwrap()).unwrap();
    let bad_report = d.join("bad_validation.csv");
    let v = ratemill(&["validate-scale", "--scale", s(&bad_path), "--oot", s(&oot), "--out", s(&bad_report)]);
    assert_eq!(code(&v), 1, "{}", String::from_utf8_lossy(&v.stderr));
    assert!(bad_report.exists());
}

#[test]
fn usage_and_input_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent.json");
    let out = ratemill(&["score", "--model", s(&missing), "--input", s(&missing), "--out", s(&tmp.path().join("x.csv"))]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&ratemill(&["train", "--no-such-flag"])), 2);
    assert_eq!(code(&ratemill(&["frobnicate"])), 2);
    assert_eq!(code(&ratemill(&["--help"])), 0);
    assert_eq!(code(&ratemill(&["--version"])), 0);
}

#[test]
fn same_seed_gives_identical_output_digests() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = synth(a.path(), "9");
    let sb = synth(b.path(), "9");
    assert_eq!(output_digests(&sa.join("manifest.json")), output_digests(&sb.join("manifest.json")));

    let mut models = Vec::new();
    for (dir, syn) in [(a.path(), &sa), (b.path(), &sb)] {
        let splits = dir.join("splits");
        run_ok(&[
            "ingest",
            "--input",
            s(&syn.join("snapshots.csv")),
            "--labels",
            s(&syn.join("labels.csv")),
            "--prior",
            s(&syn.join("prior.csv")),
            "--seed",
            "9",
            "--out",
            s(&splits),
        ]);
        let model = dir.join("model.json");
        run_ok(&["train", "--data", s(&splits), "--seed", "9", "--out", s(&model)]);
        models.push(output_digests(&dir.join("model.manifest.json")));
    }
    assert_eq!(models[0], models[1]);
    let c = tempfile::tempdir().unwrap();
    let sc = synth(c.path(), "10");
    assert_ne!(output_digests(&sa.join("manifest.json")), output_digests(&sc.join("manifest.json")));
}
