mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use gencache_core::embeddings::HashedEmbedder;
use gencache_core::prompt::PromptRecord;
use gencache_core::runtime::{Runtime, RuntimeConfig};
use serde_json::Value;

fn gencache(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gencache"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn bench_report(dir: &Path, name: &str, args: &[&str]) -> String {
    let path = dir.join(name);
    let mut all = vec!["bench"];
    all.extend_from_slice(args);
    all.extend_from_slice(&["--report", path.to_str().unwrap()]);
    let out = gencache(&all);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn exact_bench_reports_zero_hits() {
    let dir = tempfile::tempdir().unwrap();
    let text = bench_report(
        dir.path(),
        "r.json",
        &["--dataset", "param-only", "--n", "100", "--strategy", "exact", "--seed", "7"],
    );
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["hit_rate"], 0.0);
    assert_eq!(v["n"], 100);
    assert_eq!(v["strategy"], "exact");
    assert_eq!(v["dataset"], "param-only");
    assert!(v["note"].as_str().unwrap().contains("desk-scale"));
}

#[test]
fn bench_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--dataset", "param-w-synonym", "--n", "300", "--strategy", "gencache-feedback", "--seed", "11"];
    let a = bench_report(dir.path(), "a.json", &args);
    let b = bench_report(dir.path(), "b.json", &args);
    assert_eq!(a, b);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(gencache(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(gencache(&["bench", "--dataset", "param-only"]).status.code(), Some(2));
    assert_eq!(gencache(&["bench", "--bogus"]).status.code(), Some(2));
    let out = gencache(&["bench", "--dataset", "nope", "--n", "1", "--strategy", "exact"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--help"));
}

#[test]
fn serve_without_config_file_exits_one() {
    let out = gencache(&["serve", "--config", "/nonexistent/gencache.conf"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("reading config"));
}

fn saved_state(dir: &Path) {
    let rt = Runtime::new(
        RuntimeConfig::default(),
        Arc::new(HashedEmbedder::new(384)),
        Arc::new(common::shop_codegen()),
        Arc::new(common::approving_validator()),
    );
    for (i, item) in common::ITEMS.iter().take(5).enumerate() {
        let text = common::shop_prompt(item, 30 + i as u32);
        rt.handle_request(PromptRecord::with_parts(format!("r{i}"), text.clone(), text), &common::shop_agent())
            .unwrap();
        rt.wait_idle();
    }
    rt.snapshot(dir).unwrap();
}

#[test]
fn inspect_snapshot_and_restore() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    saved_state(&data);

    let out = gencache(&["inspect", "--data-dir", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["clusters"].as_array().unwrap().len(), 1);
    // the fifth request was a hit and hits are not stored
    assert_eq!(v["clusters"][0]["size"], 4);
    assert_eq!(v["cache"].as_array().unwrap().len(), 1);
    assert_eq!(v["cache"][0]["cluster_id"], v["clusters"][0]["id"]);

    let copy = dir.path().join("copy");
    let out = gencache(&["snapshot", "--data-dir", data.to_str().unwrap(), "--out", copy.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let fresh = dir.path().join("fresh");
    std::fs::create_dir_all(&fresh).unwrap();
    std::fs::write(fresh.join("stale.txt"), "old").unwrap();
    let out = gencache(&["restore", "--from", copy.to_str().unwrap(), "--data-dir", fresh.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!fresh.join("stale.txt").exists());

    let again = gencache(&["inspect", "--data-dir", fresh.to_str().unwrap()]);
    let w: Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(w["clusters"], v["clusters"]);
    assert_eq!(w["cache"].as_array().unwrap().len(), 1);

    let out = gencache(&["inspect", "--data-dir", dir.path().join("empty").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
