//! End-to-end exercises of the `tides` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tides(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tides"))
        .args(args)
        .output()
        .expect("spawn tides binary")
}

fn ok(args: &[&str]) {
    let out = tides(args);
    assert!(
        out.status.success(),
        "tides {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path(p: &Path) -> String {
    p.display().to_string()
}

/// Synth + cluster + 1-epoch train into `dir`, returning (data, out) dirs.
fn tiny_pipeline(dir: &Path, seed: &str) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let out = dir.join("out");
    ok(&[
        "synth", "--out", &path(&data), "--regions", "8", "--days", "10", "--seed", seed,
    ]);
    ok(&[
        "cluster", "--data", &path(&data), "--out", &path(&out),
        "--k-clusters", "2", "--knn", "3", "--seed", seed,
    ]);
    ok(&[
        "train", "--data", &path(&data),
        "--clusters", &path(&out.join("clusters.csv")),
        "--out", &path(&out), "--epochs", "1", "--seed", seed,
    ]);
    (data, out)
}

#[test]
fn synth_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        ok(&["synth", "--out", &path(dir), "--regions", "6", "--days", "8", "--seed", "11"]);
    }
    for f in ["regions.csv", "traffic.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs between identical seeded runs"
        );
    }
}

#[test]
fn synth_rejects_too_few_days_with_exit_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tides(&["synth", "--out", &path(tmp.path()), "--regions", "6", "--days", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn cluster_writes_one_row_per_region() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    ok(&["synth", "--out", &path(&data), "--regions", "9", "--days", "8", "--seed", "5"]);
    ok(&[
        "cluster", "--data", &path(&data), "--out", &path(&out),
        "--k-clusters", "3", "--knn", "3", "--seed", "5",
    ]);
    let text = std::fs::read_to_string(out.join("clusters.csv")).unwrap();
    assert_eq!(text.lines().count(), 10, "header plus nine regions");

    // k = 1 degenerates to a single zone for every region.
    let single = tmp.path().join("single");
    ok(&[
        "cluster", "--data", &path(&data), "--out", &path(&single),
        "--k-clusters", "1", "--knn", "3", "--seed", "5",
    ]);
    let text = std::fs::read_to_string(single.join("clusters.csv")).unwrap();
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').nth(1), Some("0"), "bad row: {line}");
    }
}

#[test]
fn seeded_training_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, out_a) = tiny_pipeline(&tmp.path().join("a"), "21");
    let (_, out_b) = tiny_pipeline(&tmp.path().join("b"), "21");
    for f in ["history_z0.jsonl", "model_z0.bin", "model_z1.bin", "vocab.txt"] {
        assert_eq!(
            std::fs::read(out_a.join(f)).unwrap(),
            std::fs::read(out_b.join(f)).unwrap(),
            "{f} differs between identical seeded runs"
        );
    }
}

#[test]
fn evaluate_report_and_ground_truth_calibration() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = tiny_pipeline(tmp.path(), "7");
    let eval = out.join("eval");
    ok(&[
        "evaluate", "--data", &path(&data),
        "--clusters", &path(&out.join("clusters.csv")),
        "--model-dir", &path(&out), "--out", &path(&eval), "--seed", "7",
    ]);
    for f in ["report.json", "report_normalized.json", "summary.json", "predictions.csv"] {
        assert!(eval.join(f).exists(), "missing {f}");
    }
    let text = String::from_utf8(tides(&["report", "--eval", &path(&eval)]).stdout).unwrap();
    assert!(text.contains("seasonal_naive"), "report output:\n{text}");

    // Feeding the ground truth back as external predictions scores zero error.
    let preds = std::fs::read_to_string(eval.join("predictions.csv")).unwrap();
    let perfect: String = preds
        .lines()
        .enumerate()
        .map(|(i, line)| {
            if i == 0 {
                line.to_string()
            } else {
                let cols: Vec<&str> = line.split(',').collect();
                format!("{},{},{},{}", cols[0], cols[1], cols[2], cols[2])
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let perfect_path = tmp.path().join("perfect.csv");
    std::fs::write(&perfect_path, perfect).unwrap();
    let eval_perfect = out.join("eval_perfect");
    ok(&[
        "evaluate", "--data", &path(&data),
        "--clusters", &path(&out.join("clusters.csv")),
        "--model-dir", &path(&out), "--out", &path(&eval_perfect),
        "--external-predictions", &path(&perfect_path), "--seed", "7",
    ]);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(eval_perfect.join("summary.json")).unwrap()).unwrap();
    let ext = &summary["models"]["external"];
    assert_eq!(ext["mae"].as_f64().unwrap(), 0.0);
    assert_eq!(ext["rmse"].as_f64().unwrap(), 0.0);
    assert!((ext["pearson_r"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn external_rescoring_matches_internal_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = tiny_pipeline(tmp.path(), "13");
    let eval = out.join("eval");
    ok(&[
        "evaluate", "--data", &path(&data),
        "--clusters", &path(&out.join("clusters.csv")),
        "--model-dir", &path(&out), "--out", &path(&eval), "--seed", "13",
    ]);
    let eval2 = out.join("eval_ext");
    ok(&[
        "evaluate", "--data", &path(&data),
        "--clusters", &path(&out.join("clusters.csv")),
        "--model-dir", &path(&out), "--out", &path(&eval2),
        "--external-predictions", &path(&eval.join("predictions.csv")), "--seed", "13",
    ]);
    let a: serde_json::Value =
        serde_json::from_slice(&std::fs::read(eval.join("summary.json")).unwrap()).unwrap();
    let b: serde_json::Value =
        serde_json::from_slice(&std::fs::read(eval2.join("summary.json")).unwrap()).unwrap();
    assert_eq!(a["models"]["tides"], b["models"]["external"]);
}

#[test]
fn cross_zone_evaluation_names_both_zones() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = tiny_pipeline(tmp.path(), "17");
    let eval = out.join("eval_xz");
    ok(&[
        "evaluate", "--data", &path(&data),
        "--clusters", &path(&out.join("clusters.csv")),
        "--model-dir", &path(&out), "--out", &path(&eval),
        "--train-zone", "0", "--eval-zone", "1", "--seed", "17",
    ]);
    let text = String::from_utf8(tides(&["report", "--eval", &path(&eval)]).stdout).unwrap();
    assert!(text.contains("trained on z0, evaluated on z1"), "report output:\n{text}");

    // One-sided flags are a usage error.
    let out = tides(&[
        "evaluate", "--data", &path(&data),
        "--clusters", &path(&out.join("clusters.csv")),
        "--model-dir", &path(&out), "--out", &path(&eval), "--train-zone", "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
