use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lidcert_harness::{DatasetSpec, RunConfig, RunRecord};
use serde_json::Value;
use tempfile::TempDir;

fn lidcert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lidcert")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

/// Writes a small two-task blobs config and returns its path.
fn config(dir: &Path) -> PathBuf {
    let mut c = RunConfig::desk_preset();
    if let DatasetSpec::Blobs(b) = &mut c.dataset {
        b.tasks = 2;
    }
    c.seed = 3;
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn trained(dir: &Path, cfg: &Path) -> PathBuf {
    let model = dir.join("model.json");
    let out = lidcert(&["train", "--config", s(cfg), "--out", s(&model)]);
    let summary = stdout_json(&out);
    assert!(summary["test_accuracy"].as_f64().unwrap() > 0.9);
    model
}

#[test]
fn certify_reproduces_the_stored_bound() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path());
    let model = trained(dir.path(), &cfg);
    let lid = dir.path().join("lid.json");
    let summary = stdout_json(&lidcert(&["lid", "--config", s(&cfg), "--model", s(&model), "--out", s(&lid)]));
    assert!(summary["checkpoints"].as_u64().unwrap() >= 1);
    let report = stdout_json(&lidcert(&["certify", "--config", s(&cfg), "--lid", s(&lid)]));
    let rows = report["checkpoints"].as_array().unwrap();
    assert_eq!(rows.len() as u64, summary["checkpoints"].as_u64().unwrap());
    for row in rows {
        assert_eq!(row["reproduced"], Value::Bool(true), "{row}");
        assert_eq!(row["certified_bound"], row["stored_certified_bound"]);
    }
}

#[test]
fn zero_update_returns_the_input() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path());
    let model = trained(dir.path(), &cfg);
    let lid = dir.path().join("lid.json");
    stdout_json(&lidcert(&["lid", "--config", s(&cfg), "--model", s(&model), "--out", s(&lid)]));
    let before: Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    let p = before["params"].as_array().unwrap().len();
    let proposal = dir.path().join("proposal.json");
    std::fs::write(&proposal, serde_json::json!({ "delta": vec![0.0; p], "provenance": "test" }).to_string()).unwrap();
    let updated = dir.path().join("updated.json");
    let summary = stdout_json(&lidcert(&[
        "update", "--model", s(&model), "--lid", s(&lid), "--proposal", s(&proposal), "--out", s(&updated),
    ]));
    assert_eq!(summary["clamped_coordinates"], 0);
    let after: Value = serde_json::from_str(&std::fs::read_to_string(&updated).unwrap()).unwrap();
    assert_eq!(before, after);
}

#[test]
fn buffer_without_calls_matches_zero_buffer() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path());
    let out = dir.path().join("runs");
    let run = |alg: &str, extra: &[&str]| {
        let mut args = vec!["continual", "--config", s(&cfg), "--algorithm", alg, "--seeds", "0,1", "--format", "json"];
        args.extend_from_slice(&["--out-dir", s(&out)]);
        args.extend_from_slice(extra);
        stdout_json(&lidcert(&args))
    };
    run("zero", &[]);
    run("buffer", &["--max-calls", "0"]);
    for seed in 0..2 {
        let read = |alg: &str| {
            let text = std::fs::read_to_string(out.join(format!("{alg}-seed{seed}.json"))).unwrap();
            RunRecord::from_json(&text).unwrap().without_timings()
        };
        let (z, b) = (read("zero"), read("buffer"));
        // the echoed configs differ in `max_calls` only
        let b = RunRecord { algorithm: z.algorithm.clone(), config: z.config.clone(), ..b };
        assert!(b == z, "seed {seed}: trajectories differ");
    }
}

#[test]
fn report_renders_records() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path());
    let runs = dir.path().join("runs");
    stdout_json(&lidcert(&[
        "continual", "--config", s(&cfg), "--seeds", "0..2", "--format", "json", "--out-dir", s(&runs),
    ]));
    let inputs = [runs.join("zero-seed0.json"), runs.join("zero-seed1.json")];
    let out = lidcert(&["report", s(&inputs[0]), s(&inputs[1])]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("algorithm,seed,step,metric,task,value"));
    let reports = dir.path().join("reports");
    let summary = stdout_json(&lidcert(&[
        "report", s(&inputs[0]), s(&inputs[1]), "--format", "both", "--out-dir", s(&reports),
    ]));
    assert_eq!(summary["records"], 2);
    let table = std::fs::read_to_string(reports.join("report-accuracy.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "step,task,runs,mean_test_accuracy,mean_certified_accuracy");
    // two steps: one row for the first, two for the second
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"required_accuracy": 1.5}"#).unwrap();
    let out = lidcert(&["continual", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("required accuracy"));

    let out = lidcert(&["continual", "--algorithm", "ewc"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["error"]["message"].as_str().unwrap().contains("ewc"));

    let out = lidcert(&["continual", "--algorithm", "zero", "--max-calls", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let out = lidcert(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "config");

    let out = lidcert(&["train", "--out", s(&dir.path().join("m.json")), "--config", s(&dir.path().join("missing.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn run_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path());
    let model = trained(dir.path(), &cfg);
    let lid = dir.path().join("lid.json");
    stdout_json(&lidcert(&["lid", "--config", s(&cfg), "--model", s(&model), "--out", s(&lid)]));
    // a model far outside every certified box cannot be updated safely
    let mut far: Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    for v in far["params"].as_array_mut().unwrap() {
        *v = Value::from(v.as_f64().unwrap() + 100.0);
    }
    let far_path = dir.path().join("far.json");
    std::fs::write(&far_path, far.to_string()).unwrap();
    let p = far["params"].as_array().unwrap().len();
    let proposal = dir.path().join("proposal.json");
    std::fs::write(&proposal, serde_json::json!({ "delta": vec![0.0; p], "provenance": "test" }).to_string()).unwrap();
    let out = lidcert(&[
        "update", "--model", s(&far_path), "--lid", s(&lid), "--proposal", s(&proposal), "--out",
        s(&dir.path().join("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"]["kind"], "run");
}

#[test]
fn help_succeeds() {
    let out = lidcert(&["--help"]);
    assert!(out.status.success());
    for sub in ["train", "lid", "update", "continual", "certify", "report"] {
        assert!(String::from_utf8_lossy(&out.stdout).contains(sub));
    }
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        let cfg = RunConfig::from_json(&text).unwrap();
        assert_eq!(cfg.lid.dual_lr, 0.1);
        seen += 1;
    }
    assert!(seen >= 2);
}
