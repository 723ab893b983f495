use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const GOLDEN_COMPARISON: &str = include_str!("golden/pipeline_seed7_comparison.csv");

fn probslam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probslam")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = probslam(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("scene.cfg");
    fs::write(&path, text).unwrap();
    path
}

fn comparison_rows(csv: &str) -> Vec<(String, Vec<f64>)> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let mut fields = l.split(',');
            let name = fields.next().unwrap().to_string();
            (name, fields.map(|f| f.parse().unwrap()).collect())
        })
        .collect()
}

fn manifest_without_timing(path: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let timing = v.as_object_mut().unwrap().remove("timing_ms").expect("timing section");
    assert!(timing.as_object().unwrap().values().all(|t| t.as_f64().unwrap() >= 0.0));
    v
}

#[test]
fn evaluating_a_trajectory_against_itself_gives_zero_ate() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "n_frames = 15\n");
    let scene = dir.path().join("scene");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&scene)]);
    let gt = scene.join("groundtruth.txt");
    let out = dir.path().join("eval");
    ok(&["eval", "--ref", p(&gt), "--est", p(&gt), "--out", p(&out)]);

    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("metric,n,rmse,mean,median,std,min,max"));
    let ate_row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(ate_row[0], "ate");
    assert_eq!(ate_row[1], "15");
    let rmse: f64 = ate_row[2].parse().unwrap();
    assert_eq!(format!("{rmse:.6}"), "0.000000");
    for name in ["ate.csv", "rpe_trans.csv", "rpe_rot.csv", "manifest.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
    assert!(fs::read_to_string(out.join("ate.csv")).unwrap().starts_with("timestamp,error\n"));
}

#[test]
fn static_noise_free_scene_is_recovered_by_both_methods() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "n_frames = 20\nn_dynamic_landmarks = 0\npixel_noise_sigma = 0\n",
    );
    let out = dir.path().join("run");
    ok(&["pipeline", "--config", p(&cfg), "--out", p(&out)]);
    let rows = comparison_rows(&fs::read_to_string(out.join("comparison.csv")).unwrap());
    assert_eq!(rows.len(), 2);
    for (name, values) in rows {
        assert!(values[0] <= 1e-9, "{name} ate rmse {}", values[0]);
    }
}

#[test]
fn default_scene_matches_golden_comparison() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "seed = 7\n");
    let out = dir.path().join("run");
    ok(&["pipeline", "--config", p(&cfg), "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let rows = comparison_rows(&csv);
    assert_eq!(rows[0].0, "weighted");
    assert_eq!(rows[1].0, "uniform");
    assert!(rows[0].1[0] < rows[1].1[0], "weighted {} uniform {}", rows[0].1[0], rows[1].1[0]);
    assert_eq!(csv.lines().next(), GOLDEN_COMPARISON.lines().next());
    let golden = comparison_rows(GOLDEN_COMPARISON);
    assert_eq!(rows.len(), golden.len());
    for ((name, got), (gname, want)) in rows.iter().zip(&golden) {
        assert_eq!(name, gname);
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() <= 1e-6 * w.abs(), "{name}: {g} vs golden {w}");
        }
    }

    let manifest = manifest_without_timing(&out.join("manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["command"], "pipeline");
    assert!(manifest["results"]["improvement"].as_f64().unwrap() > 0.0);
}

#[test]
fn repeated_runs_are_byte_identical_apart_from_timings() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "seed = 3\nn_frames = 20\n");
    let runs: Vec<_> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("run{i}"));
            ok(&["pipeline", "--config", p(&cfg), "--out", p(&out)]);
            let sim = dir.path().join(format!("sim{i}"));
            ok(&["simulate", "--config", p(&cfg), "--out", p(&sim)]);
            (out, sim)
        })
        .collect();
    let (a, b) = (&runs[0], &runs[1]);
    for name in ["comparison.csv", "groundtruth.txt", "estimate_weighted.txt", "estimate_uniform.txt"] {
        assert_eq!(fs::read(a.0.join(name)).unwrap(), fs::read(b.0.join(name)).unwrap(), "{name}");
    }
    for name in ["groundtruth.txt", "detections.jsonl", "problem.txt", "config.txt"] {
        assert_eq!(fs::read(a.1.join(name)).unwrap(), fs::read(b.1.join(name)).unwrap(), "{name}");
    }
    let strip = |m: Value, dir: &Path| {
        serde_json::to_string(&m).unwrap().replace(p(dir), "<out>")
    };
    assert_eq!(
        strip(manifest_without_timing(&a.0.join("manifest.json")), &a.0),
        strip(manifest_without_timing(&b.0.join("manifest.json")), &b.0)
    );
}

#[test]
fn simulated_files_solve_and_evaluate_end_to_end() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "n_frames = 20\n");
    let scene = dir.path().join("scene");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&scene)]);
    for name in ["groundtruth.txt", "detections.jsonl", "problem.txt", "config.txt", "manifest.json"] {
        assert!(scene.join(name).exists(), "{name}");
    }
    let (problem, dets, gt) = (scene.join("problem.txt"), scene.join("detections.jsonl"), scene.join("groundtruth.txt"));

    let weighted = dir.path().join("weighted.txt");
    let uniform = dir.path().join("uniform.txt");
    ok(&["solve", "--problem", p(&problem), "--detections", p(&dets), "--out", p(&weighted)]);
    ok(&["solve", "--problem", p(&problem), "--uniform-weights", "--out", p(&uniform)]);
    let manifest = manifest_without_timing(&dir.path().join("weighted.txt.manifest.json"));
    let frames = manifest["results"]["frames"].as_array().unwrap();
    assert_eq!(frames.len(), 20);
    assert!(frames.iter().all(|f| f["detection_frame"].is_u64()));

    let rmse = |est: &Path, name: &str| {
        let out = dir.path().join(name);
        ok(&["eval", "--ref", p(&gt), "--est", p(est), "--out", p(&out)]);
        let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
        summary.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse::<f64>().unwrap()
    };
    assert!(rmse(&weighted, "eval_w") < rmse(&uniform, "eval_u"));

    let pgm = dir.path().join("map.pgm");
    ok(&["probmap", "--detections", p(&dets), "--frame", "0.1", "--out", p(&pgm)]);
    let bytes = fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n640 480\n255\n"));
    assert_eq!(bytes.len(), "P5\n640 480\n255\n".len() + 640 * 480);
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let out = probslam(&[
        "solve", "--problem", "x", "--detections", "y", "--uniform-weights", "--out", p(&dir.path().join("t.txt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(probslam(&["eval", "--ref", "a"]).status.code(), Some(2));
    assert_eq!(probslam(&["frobnicate"]).status.code(), Some(2));
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn failures_exit_with_one_line_and_leave_no_outputs() {
    let dir = TempDir::new().unwrap();
    let missing = probslam(&["eval", "--ref", "/nonexistent/a.txt", "--est", "/nonexistent/b.txt", "--out", p(&dir.path().join("e"))]);
    assert_eq!(missing.status.code(), Some(1));
    let stderr = String::from_utf8(missing.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error: "));

    let traj = dir.path().join("two.txt");
    fs::write(&traj, "0 0 0 0 0 0 0 1\n1 1 0 0 0 0 0 1\n").unwrap();
    let out = dir.path().join("eval");
    let short = probslam(&["eval", "--ref", p(&traj), "--est", p(&traj), "--out", p(&out)]);
    assert_eq!(short.status.code(), Some(1));
    assert_eq!(String::from_utf8(short.stderr).unwrap().lines().count(), 1);
    assert!(!out.exists());

    let cfg = write_config(dir.path(), "n_frames = 0\n");
    let run = dir.path().join("run");
    assert_eq!(probslam(&["pipeline", "--config", p(&cfg), "--out", p(&run)]).status.code(), Some(1));
    assert!(!run.exists());

    let bad = write_config(dir.path(), "no_such_key = 1\n");
    let sim = dir.path().join("sim");
    assert_eq!(probslam(&["simulate", "--config", p(&bad), "--out", p(&sim)]).status.code(), Some(1));
    assert!(!sim.exists());
}
