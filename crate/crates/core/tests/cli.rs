//! End-to-end checks of the command-line binary: outputs, determinism and
//! exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use submap_slam::eval::{read_tum, write_tum, Stamped};
use submap_slam::geometry::Pose;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_submap-slam")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_is_deterministic_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = bin(&["simulate", "--seed", "7", "--out", path(d)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    let descriptors = fs::read_to_string(a.join("descriptors.txt")).unwrap();
    assert_eq!(descriptors.lines().filter(|l| !l.starts_with('#')).count(), 900);
}

#[test]
fn invalid_world_field_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(&["simulate", "--set", "r_cov=-1", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("r_cov"));
    let out = bin(&["explore", "--seed", "1", "--set", "k=0", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`k`"));
    assert_eq!(bin(&["explore", "--bogus"]).status.code(), Some(2));
}

#[test]
fn explore_writes_outputs_and_opens_submaps() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("run");
    assert!(bin(&["simulate", "--seed", "3", "--out", path(&data)]).status.success());
    let run = bin(&["explore", "--dataset", path(&data), "--out", path(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["trajectory.tum", "graph.txt", "stats.json", "events.csv", "metrics.json", "timing.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert!(stats["submap_count"].as_u64().unwrap() >= 2);
    assert_eq!(stats["frames_processed"].as_u64(), Some(900));
    let events = fs::read_to_string(out.join("events.csv")).unwrap();
    assert_eq!(events.lines().count(), 901);
}

#[test]
fn dense_revisit_finishes_early() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("dense");
    let out = tmp.path().join("run");
    let sim = bin(&["simulate", "--seed", "2", "--set", "loops=5", "--set", "failure_windows=none", "--set", "p_alias=0", "--out", path(&data)]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    assert!(bin(&["explore", "--dataset", path(&data), "--out", path(&out)]).status.success());
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["finished"], serde_json::Value::Bool(true));
    assert!(!stats["end_condition"].as_array().unwrap().is_empty());
    assert!(stats["frames_processed"].as_u64().unwrap() < 1500);
}

#[test]
fn relocalize_covers_the_held_out_tail() {
    let tmp = tempfile::tempdir().unwrap();
    let map = tmp.path().join("map");
    let reloc = tmp.path().join("reloc");
    assert!(bin(&["explore", "--seed", "5", "--split", "0.8", "--out", path(&map)]).status.success());
    let graph = map.join("graph.txt");
    let before = fs::read(&graph).unwrap();
    let out = bin(&["relocalize", "--seed", "5", "--graph", path(&graph), "--split", "0.8", "--out", path(&reloc)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(&graph).unwrap(), before);
    let csv = fs::read_to_string(reloc.join("relocalization.csv")).unwrap();
    let frames: Vec<u64> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(frames, (720..900).collect::<Vec<_>>());
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(reloc.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["tracking_percentage"].as_f64().is_some());
    assert!(metrics["ate_rmse"].as_f64().is_some());
}

#[test]
fn relocalize_rejects_an_empty_graph() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.txt");
    fs::write(&empty, "# nothing\n").unwrap();
    let out = bin(&["relocalize", "--seed", "5", "--graph", path(&empty), "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_reports_ate() {
    let tmp = tempfile::tempdir().unwrap();
    let traj: Vec<Stamped> = (0..20)
        .map(|i| Stamped { timestamp: i as f64 * 0.1, pose: Pose::planar((i as f64 * 0.3).sin(), i as f64 * 0.2, 0.1 * i as f64) })
        .collect();
    let gt = tmp.path().join("gt.tum");
    fs::write(&gt, write_tum(&traj)).unwrap();
    let ate = |est: &Path, align: &str| -> (Option<i32>, Option<f64>) {
        let out = bin(&["evaluate", "--est", path(est), "--gt", path(&gt), "--align", align]);
        let v: Option<serde_json::Value> = serde_json::from_slice(&out.stdout).ok();
        (out.status.code(), v.and_then(|v| v["ate_rmse"].as_f64()))
    };
    assert_eq!(ate(&gt, "none"), (Some(0), Some(0.0)));

    let scaled: Vec<Stamped> = read_tum(&fs::read_to_string(&gt).unwrap())
        .unwrap()
        .iter()
        .map(|s| Stamped { timestamp: s.timestamp, pose: Pose::new(*s.pose.rotation(), s.pose.translation() * 3.0) })
        .collect();
    let scaled_path = tmp.path().join("scaled.tum");
    fs::write(&scaled_path, write_tum(&scaled)).unwrap();
    let (code, value) = ate(&scaled_path, "sim");
    assert_eq!(code, Some(0));
    assert!(value.unwrap() < 1e-9);

    let shifted: Vec<Stamped> = traj.iter().map(|s| Stamped { timestamp: s.timestamp + 100.0, pose: s.pose }).collect();
    let shifted_path = tmp.path().join("shifted.tum");
    fs::write(&shifted_path, write_tum(&shifted)).unwrap();
    let out = bin(&["evaluate", "--est", path(&shifted_path), "--gt", path(&gt)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("associated"));
}
