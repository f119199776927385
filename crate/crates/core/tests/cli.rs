use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedfarm::report::{self, MANIFEST_FILE, METRICS_FILE, SUMMARY_FILE, SWEEP_SUMMARY_FILE};
use serde_json::{json, Value};
use tempfile::TempDir;

fn fedfarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedfarm"))
        .args(args)
        .output()
        .expect("spawn fedfarm")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn small() -> Value {
    json!({
        "dataset": {"kind": "blobs", "n": 300, "classes": 2},
        "mode": "sync",
        "clients": 4,
        "rounds": 5,
        "model": {"hidden": [4]}
    })
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_fills_defaults() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "min.json",
        &json!({"dataset": {"kind": "blobs"}, "mode": "async"}),
    );
    let out = fedfarm(&["validate", "--config", s(&cfg)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["async"]["decay"], json!(0.9));
    assert_eq!(v["local_epochs"], json!(3));
    assert_eq!(v["rounds"], json!(20));
    assert_eq!(v["clients"], json!(10));
}

#[test]
fn bad_configs_exit_1_naming_the_key() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (json!({"dataset": {"kind": "blobs"}, "mode": "async", "async": {"decay": 1.5}}), "(0,1]"),
        (json!({"dataset": {"kind": "blobs"}, "mode": "sync", "rounds": 0}), "rounds"),
        (json!({"dataset": {"kind": "blobs"}, "mode": "sync", "rouns": 3}), "rouns"),
        (json!({"dataset": {"kind": "blobs"}, "mode": "sync", "compression": {"topk": 2.0}}), "compression.topk"),
    ];
    for (i, (cfg, needle)) in cases.iter().enumerate() {
        let path = write_config(dir.path(), &format!("bad{i}.json"), cfg);
        for cmd in ["validate", "run"] {
            let mut args = vec![cmd, "--config", s(&path)];
            let out_dir = dir.path().join(format!("out{i}"));
            if cmd == "run" {
                args.extend(["--out", s(&out_dir)]);
            }
            let out = fedfarm(&args);
            assert_eq!(out.status.code(), Some(1), "{cmd} {cfg}");
            assert!(stderr(&out).contains(needle), "{cmd}: {} lacks {needle}", stderr(&out));
            assert!(!out_dir.join(METRICS_FILE).exists());
        }
    }
    let missing = fedfarm(&["validate", "--config", s(&dir.path().join("nope.json"))]);
    assert_ne!(missing.status.code(), Some(0));
}

#[test]
fn run_writes_three_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &small());
    let out_dir = dir.path().join("run");
    let out = fedfarm(&["run", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines = fs::read_to_string(out_dir.join(METRICS_FILE)).unwrap();
    assert_eq!(lines.lines().count(), 5);
    let records = report::read_metrics(out_dir.join(METRICS_FILE)).unwrap();
    assert_eq!(records.len(), 5);
    let summary = report::read_summary(out_dir.join(SUMMARY_FILE)).unwrap();
    assert_eq!(summary.len(), 1);
    assert_eq!(summary[0].uplink_bytes, records[4].uplink_bytes);
    assert_eq!(summary[0].rounds_or_events, 5);
    let header = fs::read_to_string(out_dir.join(SUMMARY_FILE)).unwrap();
    assert!(header.starts_with(
        "run_id,mode,final_accuracy,final_loss,uplink_bytes,downlink_bytes,sim_time_s,rounds_or_events"
    ));
    let manifest = report::read_manifest(out_dir.join(MANIFEST_FILE)).unwrap();
    assert!(!manifest.stalled);
    assert_eq!(manifest.config["rounds"], json!(5));
    assert_eq!(manifest.config["local_epochs"], json!(3));
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &small());
    let mut metrics = Vec::new();
    for w in ["1", "4"] {
        let out_dir = dir.path().join(format!("w{w}"));
        let out = fedfarm(&["--workers", w, "run", "--config", s(&cfg), "--out", s(&out_dir)]);
        assert!(out.status.success(), "{}", stderr(&out));
        metrics.push(fs::read_to_string(out_dir.join(METRICS_FILE)).unwrap());
    }
    assert_eq!(metrics[0], metrics[1]);
}

#[test]
fn stalled_run_exits_2_with_partial_artifacts() {
    let dir = TempDir::new().unwrap();
    let mut cfg = small();
    cfg["network"] = json!({"p_available": 0.0});
    let path = write_config(dir.path(), "c.json", &cfg);
    let out_dir = dir.path().join("run");
    let out = fedfarm(&["run", "--config", s(&path), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(report::read_manifest(out_dir.join(MANIFEST_FILE)).unwrap().stalled);
}

#[test]
fn topk_sweep_bytes_increase_with_k() {
    let dir = TempDir::new().unwrap();
    let mut cfg = small();
    cfg["network"] = json!({"p_available": 1.0});
    let path = write_config(dir.path(), "c.json", &cfg);
    let out_dir = dir.path().join("sweep");
    let out = fedfarm(&[
        "sweep", "--config", s(&path), "--param", "compression.topk", "--values", "0.1,0.5,1.0", "--out",
        s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = report::read_sweep_summary(out_dir.join(SWEEP_SUMMARY_FILE)).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.windows(2).all(|w| w[0].uplink_bytes < w[1].uplink_bytes));
    assert!(rows.iter().all(|r| r.key == "compression.topk"));
    for r in &rows {
        assert!(out_dir.join(&r.run_id).join(METRICS_FILE).exists());
    }
}

#[test]
fn availability_sweep_matches_setting() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "dataset": {"kind": "blobs", "n": 2000},
        "mode": "sync",
        "clients": 100,
        "rounds": 10,
        "local_epochs": 1,
        "model": {"hidden": []}
    });
    let path = write_config(dir.path(), "c.json", &cfg);
    let out_dir = dir.path().join("sweep");
    let out = fedfarm(&[
        "--workers", "0", "sweep", "--config", s(&path), "--param", "network.p_available", "--values", "0.5,1.0",
        "--out", s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = report::read_sweep_summary(out_dir.join(SWEEP_SUMMARY_FILE)).unwrap();
    for (row, p) in rows.iter().zip([0.5, 1.0]) {
        let records = report::read_metrics(out_dir.join(&row.run_id).join(METRICS_FILE)).unwrap();
        let mean = records.iter().map(|r| r.availability_rate).sum::<f64>() / records.len() as f64;
        assert!((mean - p).abs() <= 0.05, "p={p}: {mean}");
    }
}

#[test]
fn single_value_sweep_equals_run() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "c.json", &small());
    let run_dir = dir.path().join("run");
    assert!(fedfarm(&["run", "--config", s(&path), "--out", s(&run_dir)]).status.success());
    let sweep_dir = dir.path().join("sweep");
    let out = fedfarm(&[
        "sweep", "--config", s(&path), "--param", "seed", "--values", "0", "--out", s(&sweep_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = report::read_sweep_summary(sweep_dir.join(SWEEP_SUMMARY_FILE)).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(
        fs::read_to_string(run_dir.join(METRICS_FILE)).unwrap(),
        fs::read_to_string(sweep_dir.join(&rows[0].run_id).join(METRICS_FILE)).unwrap()
    );
}

#[test]
fn unknown_sweep_key_exits_1_before_running() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "c.json", &small());
    let out_dir = dir.path().join("sweep");
    let out = fedfarm(&[
        "sweep", "--config", s(&path), "--param", "compression.topkk", "--values", "0.1", "--out", s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("topkk"), "{}", stderr(&out));
    assert!(!out_dir.join(SWEEP_SUMMARY_FILE).exists());
}

#[test]
fn validated_config_reproduces_run() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "c.json", &small());
    let full = fedfarm(&["validate", "--config", s(&path)]);
    assert!(full.status.success());
    let full_path = dir.path().join("full.json");
    fs::write(&full_path, &full.stdout).unwrap();
    let mut metrics = Vec::new();
    for (name, cfg) in [("a", &path), ("b", &full_path)] {
        let out_dir = dir.path().join(name);
        assert!(fedfarm(&["run", "--config", s(cfg), "--out", s(&out_dir)]).status.success());
        metrics.push(fs::read_to_string(out_dir.join(METRICS_FILE)).unwrap());
    }
    assert_eq!(metrics[0], metrics[1]);
    // the manifest's config is itself a complete, valid config
    let manifest = report::read_manifest(dir.path().join("a").join(MANIFEST_FILE)).unwrap();
    let again = write_config(dir.path(), "manifest_cfg.json", &manifest.config);
    let out_dir = dir.path().join("c");
    assert!(fedfarm(&["run", "--config", s(&again), "--out", s(&out_dir)]).status.success());
    assert_eq!(metrics[0], fs::read_to_string(out_dir.join(METRICS_FILE)).unwrap());
}
