use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn pcr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcr"))
        .args(args)
        .env_remove("PCR_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = pcr(args);
    assert!(
        out.status.success(),
        "pcr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Hashes every file under `dir` (sorted), skipping names in `skip`.
fn tree_hash(dir: &Path, skip: &[&str]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !skip.iter().any(|n| p.file_name().unwrap() == *n) {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, hex::encode(Sha256::digest(fs::read(&p).unwrap()))));
            }
        }
    }
    out.sort();
    out
}

fn synth(dir: &Path, frames: usize) -> PathBuf {
    let scene = dir.join("scene");
    ok(&[
        "synth",
        "--out",
        s(&scene),
        "--set",
        &format!("frames={frames}"),
        "--set",
        "path=\"arc\"",
        "--set",
        "precision_target=0.94",
        "--set",
        "recall_target=0.78",
    ]);
    scene
}

fn filter(scene: &Path, out: &Path, threads: &str) {
    ok(&[
        "filter",
        "--threads",
        threads,
        "--points",
        s(&scene.join("points")),
        "--detections",
        s(&scene.join("detections.jsonl")),
        "--out",
        s(out),
    ]);
}

fn outlier_files(out: &Path) -> Vec<(String, String)> {
    tree_hash(&out.join("outliers"), &[])
}

#[test]
fn filter_on_exported_scene() {
    let tmp = TempDir::new().unwrap();
    let scene = synth(tmp.path(), 10);
    let a = tmp.path().join("a");
    filter(&scene, &a, "1");
    assert_eq!(outlier_files(&a).len(), 10);
    let timing = fs::read_to_string(a.join("timing.csv")).unwrap();
    assert_eq!(timing.lines().count(), 11);
    assert!(a.join("poses.txt").is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "filter");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 12);

    // Re-running gives byte-identical outliers, and so does a wide thread pool.
    let b = tmp.path().join("b");
    filter(&scene, &b, "1");
    assert_eq!(outlier_files(&a), outlier_files(&b));
    let c = tmp.path().join("c");
    filter(&scene, &c, "8");
    assert_eq!(outlier_files(&a), outlier_files(&c));
    assert_eq!(
        fs::read(a.join("poses.txt")).unwrap(),
        fs::read(c.join("poses.txt")).unwrap()
    );

    // Scoring against the exported labels.
    let conf = tmp.path().join("conf");
    ok(&[
        "confusion",
        "--outliers",
        s(&a.join("outliers")),
        "--labels",
        s(&scene.join("labels.txt")),
        "--out",
        s(&conf),
    ]);
    assert!(fs::read_to_string(conf.join("confusion.csv"))
        .unwrap()
        .contains("f1"));
}

#[test]
fn missing_detections_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let scene = synth(tmp.path(), 2);
    let missing = tmp.path().join("nowhere.jsonl");
    let out = pcr(&[
        "filter",
        "--points",
        s(&scene.join("points")),
        "--detections",
        s(&missing),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn config_file_and_overrides() {
    let tmp = TempDir::new().unwrap();
    let scene = synth(tmp.path(), 3);
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "conf_threshold = 0.4\nransac_iters = 100\n").unwrap();
    let out = tmp.path().join("o");
    let (points, dets) = (scene.join("points"), scene.join("detections.jsonl"));
    let args = [
        "filter",
        "--config",
        s(&cfg),
        "--set",
        "ransac_iters=50",
        "--points",
        s(&points),
        "--detections",
        s(&dets),
        "--out",
        s(&out),
    ];
    ok(&args);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["ransac_iters"], "50");
    assert_eq!(manifest["config"]["conf_threshold"], "0.4");

    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(pcr(&args).status.code(), Some(2));
    assert_eq!(
        pcr(&["--threads", "0", "synth", "--out", s(&tmp.path().join("x"))])
            .status
            .code(),
        Some(2)
    );
}

fn kitti_line(x: f64) -> String {
    format!("1 0 0 {x} 0 1 0 0 0 0 1 0\n")
}

fn write_traj(path: &Path, step: f64, n: usize) {
    let text: String = (0..n).map(|i| kitti_line(step * i as f64)).collect();
    fs::write(path, text).unwrap();
}

fn stats_row(path: &Path) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let row = text.lines().nth(1).unwrap();
    row.split(',').skip(1).map(|v| v.parse().unwrap()).collect()
}

#[test]
fn eval_modes() {
    let tmp = TempDir::new().unwrap();
    let (gt, est) = (tmp.path().join("gt.txt"), tmp.path().join("est.txt"));
    write_traj(&gt, 1.0, 10);
    write_traj(&est, 1.1, 10);

    let same = tmp.path().join("same");
    ok(&["eval", "--est", s(&gt), "--gt", s(&gt), "--out", s(&same)]);
    assert!(stats_row(&same.join("stats.csv"))
        .iter()
        .all(|v| v.abs() < 1e-12));
    assert_eq!(
        fs::read_to_string(same.join("errors.csv"))
            .unwrap()
            .lines()
            .count(),
        11
    );

    let rpe = tmp.path().join("rpe");
    ok(&[
        "eval",
        "--est",
        s(&est),
        "--gt",
        s(&gt),
        "--mode",
        "rpe",
        "--delta",
        "1",
        "--out",
        s(&rpe),
    ]);
    let row = stats_row(&rpe.join("stats.csv"));
    assert!((row[3] - 0.1).abs() < 1e-9, "rmse {}", row[3]);

    let bad = pcr(&[
        "eval",
        "--est",
        s(&est),
        "--gt",
        s(&gt),
        "--mode",
        "rpe",
        "--delta",
        "0",
        "--out",
        s(&tmp.path().join("d0")),
    ]);
    assert_eq!(bad.status.code(), Some(2));

    fs::write(&est, "1 0 0\n").unwrap();
    let bad = pcr(&[
        "eval",
        "--est",
        s(&est),
        "--gt",
        s(&gt),
        "--out",
        s(&tmp.path().join("p")),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains(s(&est)));
}

fn improvement(csv: &Path, field: &str) -> f64 {
    let text = fs::read_to_string(csv).unwrap();
    let row = text.lines().find(|l| l.starts_with(field)).unwrap();
    row.rsplit(',').next().unwrap().parse().unwrap()
}

#[test]
fn report_percentages() {
    let tmp = TempDir::new().unwrap();
    let (base, ours) = (tmp.path().join("base.csv"), tmp.path().join("ours.csv"));
    fs::write(
        &base,
        "metric,max,median,min,rmse\nape,0.6,0.2773,0.01,0.2814\n",
    )
    .unwrap();
    fs::write(
        &ours,
        "metric,max,median,min,rmse\nape,0.5,0.1929,0.01,0.2084\n",
    )
    .unwrap();
    let out = tmp.path().join("r");
    ok(&[
        "report",
        "--baseline",
        s(&base),
        "--ours",
        s(&ours),
        "--metric",
        "ape",
        "--out",
        s(&out),
    ]);
    assert!((improvement(&out.join("improvement.csv"), "rmse") - 25.9).abs() < 0.05);
    assert!((improvement(&out.join("improvement.csv"), "median") - 30.4).abs() < 0.05);

    let same = tmp.path().join("same");
    ok(&[
        "report",
        "--baseline",
        s(&base),
        "--ours",
        s(&base),
        "--out",
        s(&same),
    ]);
    for f in ["max", "median", "min", "rmse"] {
        assert_eq!(improvement(&same.join("improvement.csv"), f), 0.0);
    }
    let missing = pcr(&[
        "report",
        "--baseline",
        s(&base),
        "--ours",
        s(&ours),
        "--metric",
        "rpe",
        "--out",
        s(&same),
    ]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn synth_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "synth",
            "--set",
            "seed=7",
            "--set",
            "frames=4",
            "--out",
            s(d),
        ]);
    }
    assert_eq!(
        tree_hash(&a, &["run_manifest.json"]),
        tree_hash(&b, &["run_manifest.json"])
    );
    let strip = |p: &Path| {
        let mut m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(p.join("run_manifest.json")).unwrap())
                .unwrap();
        m.as_object_mut().unwrap().remove("wall_time_s");
        m
    };
    assert_eq!(strip(&a), strip(&b));

    let scene = tmp.path().join("scene.toml");
    fs::write(&scene, "precision_target = 1.5\n").unwrap();
    assert_eq!(
        pcr(&[
            "synth",
            "--scene",
            s(&scene),
            "--out",
            s(&tmp.path().join("c"))
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        pcr(&[
            "synth",
            "--set",
            "bogus=1",
            "--out",
            s(&tmp.path().join("c"))
        ])
        .status
        .code(),
        Some(2)
    );
}
