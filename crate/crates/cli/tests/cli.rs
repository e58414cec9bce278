use std::path::Path;
use std::process::{Command, Output};

use metaaug::meta::read_history;
use metaaug::metrics::read_metrics_csv;
use metaaug::policy::PolicyFile;
use metaaug_cli::export::PolicyExport;

fn metaaug(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metaaug"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = metaaug(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_task(dir: &Path) {
    ok(&[
        "gen-task",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        "3",
        "--set",
        "size=32",
        "--set",
        "prevalence=0.04",
        "--set",
        "train_count=4",
        "--set",
        "val_count=3",
        "--set",
        "test_count=2",
    ]);
}

const SMALL: [&str; 12] = [
    "--set", "patch=16", "--set", "width=4", "--set", "hidden_layers=1", "--set", "tea_samples=3", "--n", "4", "--m",
    "3",
];

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn gen_task_writes_splits_and_resolved_spec() {
    let dir = tempfile::tempdir().unwrap();
    small_task(dir.path());
    for split in ["train", "val", "test"] {
        assert!(dir.path().join(split).join("manifest.json").exists());
    }
    let task: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("task.json")).unwrap()).unwrap();
    assert_eq!(task["spec"]["size"], 32);
    assert_eq!(task["seed"], 3);
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    // unknown key: configuration error
    let out = metaaug(&["gen-task", "--out", d, "--set", "sise=32"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sise"));
    // invalid value names the field
    let out = metaaug(&["gen-task", "--out", d, "--set", "prevalence=0.9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("prevalence"));
    // usage error
    assert_eq!(metaaug(&["train"]).status.code(), Some(1));
    assert_eq!(metaaug(&["--help"]).status.code(), Some(0));
    // missing dataset: data error
    let out = metaaug(&["train", "--data", &format!("{d}/missing"), "--out", d]);
    assert_eq!(out.status.code(), Some(2));
    // invalid run config
    small_task(dir.path());
    let out = metaaug(&["train", "--data", d, "--out", &format!("{d}/run"), "--cadence", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cadence"));
}

#[test]
fn numeric_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    small_task(dir.path());
    let run = dir.path().join("run");
    let mut args = vec!["train", "--data", dir.path().to_str().unwrap(), "--out", run.to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(&["--set", "alpha=1e30", "--set", "grad_clip=null", "--iterations", "4", "--mode", "none"]);
    let out = metaaug(&args);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    small_task(dir.path());
    let run = dir.path().join("run");
    train(dir.path(), &run, &["--mode", "joint", "--iterations", "6", "--cadence", "2"]);
    for f in ["config.json", "checkpoint.bin", "policy.json", "history.ndjson", "metrics.csv"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let hist = read_history(&run.join("history.ndjson")).unwrap();
    assert_eq!(hist.len(), 6);
    assert_eq!(hist.iter().filter(|r| r.policy.is_some()).count(), 3);
    let arms: Vec<String> = read_metrics_csv(&run.join("metrics.csv"))
        .unwrap()
        .into_iter()
        .map(|r| r.arm)
        .collect();
    assert_eq!(arms, ["plain", "heuristic-tea", "learned-tea"]);
    let config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["mode"], "joint");
    assert_eq!(config["n"], 4);
}

#[test]
fn default_run_directory_uses_the_output_root() {
    let dir = tempfile::tempdir().unwrap();
    small_task(dir.path());
    let root = dir.path().join("root");
    let mut args = vec!["train", "--data", dir.path().to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(&["--mode", "none", "--iterations", "2", "--seed", "9"]);
    let out = Command::new(env!("CARGO_BIN_EXE_metaaug"))
        .args(&args)
        .env("METAAUG_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("none-s9").join("metrics.csv").exists());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    small_task(dir.path());
    let full = dir.path().join("full");
    let split = dir.path().join("split");
    let common = ["--mode", "class-specific", "--cadence", "2", "--checkpoint-every", "4"];
    train(dir.path(), &full, &[&common[..], &["--iterations", "8"]].concat());
    train(dir.path(), &split, &[&common[..], &["--iterations", "4"]].concat());
    train(dir.path(), &split, &[&common[..], &["--iterations", "8", "--resume"]].concat());
    for f in ["checkpoint.bin", "policy.json", "history.ndjson", "metrics.csv"] {
        assert_eq!(
            std::fs::read(full.join(f)).unwrap(),
            std::fs::read(split.join(f)).unwrap(),
            "{f} differs after resume"
        );
    }
    // only the length may change on resume
    let mut args = vec!["train", "--data", dir.path().to_str().unwrap(), "--out", split.to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(&[&common[..], &["--iterations", "10", "--resume", "--beta", "9"]].concat());
    assert_eq!(metaaug(&args).status.code(), Some(1));
}

#[test]
fn checkpoint_interval_must_align_with_cadence() {
    let dir = tempfile::tempdir().unwrap();
    small_task(dir.path());
    let mut args = vec!["train", "--data", dir.path().to_str().unwrap(), "--out", dir.path().to_str().unwrap()];
    args.extend_from_slice(&["--cadence", "4", "--checkpoint-every", "6"]);
    assert_eq!(metaaug(&args).status.code(), Some(1));
}

#[test]
fn export_policy_round_trips_and_separates_classes() {
    let dir = tempfile::tempdir().unwrap();
    small_task(dir.path());
    let run = dir.path().join("run");
    train(
        dir.path(),
        &run,
        &["--mode", "class-specific", "--iterations", "8", "--cadence", "1", "--beta", "200"],
    );
    let policy = run.join("policy.json");
    let file = PolicyFile::load(&policy).unwrap();
    let json_out = dir.path().join("pie.json");
    let csv_out = dir.path().join("pie.csv");
    ok(&["export-policy", "--policy", policy.to_str().unwrap(), "--out", json_out.to_str().unwrap()]);
    ok(&[
        "export-policy",
        "--policy",
        policy.to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        csv_out.to_str().unwrap(),
    ]);
    let from_json = PolicyExport::from_json(&std::fs::read_to_string(&json_out).unwrap()).unwrap();
    let from_csv = PolicyExport::read_csv(&std::fs::read_to_string(&csv_out).unwrap()).unwrap();
    let tra = file.tra.as_ref().unwrap();
    let mut k = 0;
    for (fs, bs) in tra.tables[0].slots.iter().zip(&tra.tables[1].slots) {
        for (fb, bb) in fs.bins.iter().zip(&bs.bins) {
            for e in [&from_json, &from_csv] {
                assert!((e.tra[k].fg - fb.probability).abs() < 1e-9);
                assert!((e.tra[k].bg - bb.probability).abs() < 1e-9);
            }
            k += 1;
        }
    }
    assert!(from_json.tra.iter().any(|r| (r.fg - r.bg).abs() > 1e-6), "FG and BG tables coincide");

    // a future format version is refused
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&policy).unwrap()).unwrap();
    v["version"] = serde_json::json!(99);
    let bad = dir.path().join("future.json");
    std::fs::write(&bad, v.to_string()).unwrap();
    let out = metaaug(&["export-policy", "--policy", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn infer_then_eval_matches_direct_eval() {
    let dir = tempfile::tempdir().unwrap();
    small_task(dir.path());
    let d = dir.path().to_str().unwrap();
    let run = dir.path().join("run");
    train(dir.path(), &run, &["--mode", "joint", "--iterations", "4", "--cadence", "2"]);
    let r = run.to_str().unwrap();
    let pred = dir.path().join("pred");
    ok(&["infer", "--run", r, "--data", d, "--plan", "heuristic", "--out", pred.to_str().unwrap()]);
    assert!(pred.join("infer.json").exists());
    assert!(pred.join("prob-1").join("images.bin").exists());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["eval", "--pred", pred.to_str().unwrap(), "--data", d, "--out", a.to_str().unwrap()]);
    ok(&["eval", "--run", r, "--data", d, "--plan", "heuristic", "--out", b.to_str().unwrap()]);
    let (ra, rb) = (read_metrics_csv(&a).unwrap(), read_metrics_csv(&b).unwrap());
    assert_eq!(ra.len(), rb.len());
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!((x.dsc, x.hd95, x.tp, x.fp, x.fn_), (y.dsc, y.hd95, y.tp, y.fp, y.fn_));
    }
}

#[test]
fn refine_tea_is_deterministic_and_respects_the_pool() {
    let dir = tempfile::tempdir().unwrap();
    small_task(dir.path());
    let d = dir.path().to_str().unwrap();
    let run = dir.path().join("run");
    train(dir.path(), &run, &["--mode", "none", "--iterations", "2"]);
    let r = run.to_str().unwrap();
    let outs: Vec<_> = ["r1", "r2"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            ok(&["refine-tea", "--run", r, "--data", d, "--steps", "4", "--out", out.to_str().unwrap()]);
            out
        })
        .collect();
    assert_eq!(
        std::fs::read(outs[0].join("tea-policy.json")).unwrap(),
        std::fs::read(outs[1].join("tea-policy.json")).unwrap()
    );
    let only = dir.path().join("only");
    ok(&[
        "refine-tea", "--run", r, "--data", d, "--steps", "3", "--pool", "identity", "--set", "top_z=1", "--out",
        only.to_str().unwrap(),
    ]);
    let (ops, policy) = PolicyFile::load(&only.join("tea-policy.json")).unwrap().tea_policy().unwrap();
    assert_eq!(ops.len(), 1);
    assert_eq!(policy.logits.len(), 1);
    // an architecture that differs from the checkpoint is refused
    let out = metaaug(&["refine-tea", "--run", r, "--data", d, "--steps", "1", "--set", "width=8"]);
    assert_eq!(out.status.code(), Some(1));
}
