//! End-to-end runs of the `defgen` binary: generate, train, sample,
//! evaluate, plot, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn defgen() -> Command {
    Command::new(env!("CARGO_BIN_EXE_defgen"))
}

fn run(args: &[&str]) -> Output {
    defgen().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn micro_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.json");
    let body = format!(
        r#"{{"num_points": 16, "latent_dim": 8, "feature_dim": 8, "T": 10,
            "epochs": 5, "batch": 2, "seed": 3, "lr": 1e-3 {extra}}}"#
    );
    std::fs::write(&path, body).unwrap();
    path
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = walk(dir)
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            (rel, std::fs::read(&p).unwrap())
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            files.extend(walk(&path));
        } else {
            files.push(path);
        }
    }
    files
}

#[test]
fn gen_data_writes_expected_records_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    assert_ok(&run(&[
        "gen-data", "--task", "retraction", "--count", "4", "--seed", "7",
        "--out", out_a.to_str().unwrap(),
    ]));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("manifest.json")).unwrap())
            .unwrap();
    let records = manifest["records"].as_array().unwrap();
    assert_eq!(records.len(), 4);
    for r in records {
        assert_eq!(r["mode_labels"].as_array().unwrap().len(), 2);
    }

    assert_ok(&run(&[
        "gen-data", "--task", "retraction", "--count", "4", "--seed", "7",
        "--out", out_b.to_str().unwrap(),
    ]));
    assert_eq!(read_dir_sorted(&out_a), read_dir_sorted(&out_b));
}

#[test]
fn gen_data_packaging_has_five_goals_per_record() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("pack");
    assert_ok(&run(&[
        "gen-data", "--task", "packaging", "--count", "3", "--seed", "1",
        "--out", out.to_str().unwrap(),
    ]));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    for r in manifest["records"].as_array().unwrap() {
        assert_eq!(r["mode_labels"].as_array().unwrap().len(), 5);
    }
    // goal4 files exist for each record.
    let clouds = out.join("clouds");
    assert!(clouds.join("pack-s1-0000_goal4.csv").exists());
}

#[test]
fn unknown_task_fails_usage() {
    let out = run(&["gen-data", "--task", "folding", "--count", "1", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_sample_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let eval_data = tmp.path().join("eval");
    assert_ok(&run(&[
        "gen-data", "--task", "retraction", "--count", "2", "--seed", "21",
        "--out", data.to_str().unwrap(),
    ]));
    assert_ok(&run(&[
        "gen-data", "--task", "retraction", "--count", "2", "--seed", "22",
        "--out", eval_data.to_str().unwrap(),
    ]));
    let config = micro_config(tmp.path(), "");

    // Micro training completes quickly.
    let started = Instant::now();
    let ckpt = tmp.path().join("ckpt");
    assert_ok(&run(&[
        "train", "--config", config.to_str().unwrap(),
        "--data", data.to_str().unwrap(), "--out", ckpt.to_str().unwrap(),
    ]));
    assert!(
        started.elapsed().as_secs() < 60,
        "micro training took {:?}",
        started.elapsed()
    );
    assert!(ckpt.with_extension("json").exists());
    assert!(ckpt.with_extension("bin").exists());
    let loss_csv = tmp.path().join("ckpt_loss.csv");
    let loss_text = std::fs::read_to_string(&loss_csv).unwrap();
    assert!(loss_text.starts_with("epoch,noise,kl,total\n"));
    assert_eq!(loss_text.lines().count(), 1 + 5);

    // Baseline training writes a baseline-flagged header.
    let base_ckpt = tmp.path().join("base");
    assert_ok(&run(&[
        "train", "--config", config.to_str().unwrap(),
        "--data", data.to_str().unwrap(), "--out", base_ckpt.to_str().unwrap(),
        "--baseline",
    ]));
    let header: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(base_ckpt.with_extension("json")).unwrap(),
    )
    .unwrap();
    assert_eq!(header["kind"], "baseline");

    // Sampling: K files + manifest with derived seeds; reruns identical.
    let current = data.join("clouds/retr-s21-0000_current.csv");
    let context = data.join("clouds/retr-s21-0000_context.csv");
    let samples_a = tmp.path().join("samples_a");
    let samples_b = tmp.path().join("samples_b");
    for out_dir in [&samples_a, &samples_b] {
        assert_ok(&run(&[
            "sample", "--ckpt", ckpt.to_str().unwrap(),
            "--current", current.to_str().unwrap(),
            "--context", context.to_str().unwrap(),
            "--num", "3", "--seed", "5", "--out", out_dir.to_str().unwrap(),
            "--stochastic",
        ]));
    }
    assert_eq!(read_dir_sorted(&samples_a), read_dir_sorted(&samples_b));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(samples_a.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["derived_seeds"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["variant"], "stochastic");
    assert_eq!(manifest["files"].as_array().unwrap().len(), 3);

    // Evaluation: report JSON + CSV, aggregates recomputable from rows.
    let report_path = tmp.path().join("report.json");
    assert_ok(&run(&[
        "eval", "--ckpt", ckpt.to_str().unwrap(),
        "--data", eval_data.to_str().unwrap(), "--k", "3", "--seed", "9",
        "--report", report_path.to_str().unwrap(),
    ]));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let csv_text = std::fs::read_to_string(report_path.with_extension("csv")).unwrap();
    let rows: Vec<&str> = csv_text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * 3);
    // Median of the CSV chamfer column matches the JSON aggregate.
    let mut chamfers: Vec<f64> = rows
        .iter()
        .map(|r| r.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    chamfers.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = 0.5 * (chamfers[2] + chamfers[3]);
    let agg_median = report["aggregates"]["chamfer_median"].as_f64().unwrap();
    assert!((median - agg_median).abs() < 1e-12);

    // Train/eval overlap is rejected (exit 1).
    let overlap = run(&[
        "eval", "--ckpt", ckpt.to_str().unwrap(),
        "--data", data.to_str().unwrap(), "--k", "2", "--seed", "9",
        "--report", tmp.path().join("r2.json").to_str().unwrap(),
    ]);
    assert_eq!(overlap.status.code(), Some(1));

    // An untrained-quality checkpoint fails strict gates (exit 3).
    let gates = tmp.path().join("gates.json");
    std::fs::write(&gates, r#"{"max_chamfer_floor_ratio": 3.0}"#).unwrap();
    let gated = run(&[
        "eval", "--ckpt", ckpt.to_str().unwrap(),
        "--data", eval_data.to_str().unwrap(), "--k", "3", "--seed", "9",
        "--report", tmp.path().join("r3.json").to_str().unwrap(),
        "--gates", gates.to_str().unwrap(),
    ]);
    assert_eq!(gated.status.code(), Some(3));
}

#[test]
fn train_config_errors_exit_2_and_missing_data_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_config = tmp.path().join("bad.json");
    std::fs::write(&bad_config, r#"{"epochs": 1, "warp_factor": 9}"#).unwrap();
    let out = run(&[
        "train", "--config", bad_config.to_str().unwrap(),
        "--data", "/nonexistent", "--out", tmp.path().join("c").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warp_factor"), "{stderr}");

    let config = micro_config(tmp.path(), "");
    let out = run(&[
        "train", "--config", config.to_str().unwrap(),
        "--data", tmp.path().join("nodata").to_str().unwrap(),
        "--out", tmp.path().join("c").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nodata"));
}

#[test]
fn plot_renders_clouds_and_rejects_more_than_eight() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_ok(&run(&[
        "gen-data", "--task", "retraction", "--count", "1", "--seed", "2",
        "--out", data.to_str().unwrap(),
    ]));
    let current = data.join("clouds/retr-s2-0000_current.csv");
    let goal = data.join("clouds/retr-s2-0000_goal0.csv");
    let svg_a = tmp.path().join("a.svg");
    let svg_b = tmp.path().join("b.svg");
    for out_path in [&svg_a, &svg_b] {
        assert_ok(&run(&[
            "plot", "--cloud", current.to_str().unwrap(), goal.to_str().unwrap(),
            "--out", out_path.to_str().unwrap(),
        ]));
    }
    let bytes = std::fs::read(&svg_a).unwrap();
    assert_eq!(bytes, std::fs::read(&svg_b).unwrap());
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.contains("<svg") && text.contains("<circle"));
    // Two clouds: two legend entries.
    assert!(text.contains("retr-s2-0000_current (256 points)"));
    assert!(text.contains("retr-s2-0000_goal0 (256 points)"));

    // 9 clouds are rejected with the usage exit code.
    let many: Vec<String> = (0..9).map(|_| current.to_string_lossy().into_owned()).collect();
    let mut args = vec!["plot".to_string(), "--cloud".to_string()];
    args.extend(many);
    args.push("--out".into());
    args.push(tmp.path().join("x.svg").to_string_lossy().into_owned());
    let out = defgen().args(&args).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
