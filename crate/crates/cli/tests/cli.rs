//! Black-box tests of the `replay-dagger` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use replay_dagger::dataset::{write_log, TrafficLog, VehicleState, VehicleTrack};
use replay_dagger::geometry::{Point2, ReferencePath};
use replay_dagger::planner::PlanResult;
use replay_dagger::simulator::Metrics;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_replay-dagger")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn straight_track(id: u32, x0: f64, speed: f64, frames: usize) -> VehicleTrack {
    VehicleTrack {
        id,
        states: (0..frames)
            .map(|k| VehicleState {
                t_ms: 100 * k as i64,
                pos: Point2::new(x0 + speed * 0.1 * k as f64, 0.0),
                vel: Point2::new(speed, 0.0),
                heading: if speed < 0.0 { std::f64::consts::PI } else { 0.0 },
            })
            .collect(),
        length: 4.5,
        width: 1.9,
    }
}

/// Scene on a single straight lane from hand-built tracks.
fn lane_scene(dir: &Path, tracks: Vec<VehicleTrack>) -> PathBuf {
    let path = ReferencePath::new("lane", vec![Point2::new(0.0, 0.0), Point2::new(400.0, 0.0)], 1.0).unwrap();
    let map: BTreeMap<_, _> = tracks.into_iter().map(|t| (t.id, t)).collect();
    let log = TrafficLog::new(map, 100, Vec::new(), vec![path]).unwrap();
    std::fs::create_dir_all(dir).unwrap();
    write_log(&log, &dir.join("tracks.csv"), &dir.join("map.json")).unwrap();
    dir.to_path_buf()
}

const SMALL_RUN: &str = "seed = 7\n[dagger]\niterations = 2\nrollout_limit = 16\nloss_samples = 2\n[dagger.episodes]\nstride_frames = 20\n";

#[test]
fn gen_is_deterministic_and_writes_both_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["gen", "--kind", "intersection", "--vehicles", "6", "--seed", "3", "--out", s(out)]);
    }
    for f in ["tracks.csv", "map.json"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn unknown_kind_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["gen", "--kind", "highway", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_road_plan_costs_nothing_and_renders() {
    let dir = tempfile::tempdir().unwrap();
    let scene = lane_scene(&dir.path().join("scene"), vec![straight_track(1, 20.0, 8.0, 100)]);
    let svg = dir.path().join("plan.svg");
    let text = ok(&["plan", "--scene", s(&scene), "--track", "1", "--frame", "0", "--svg", s(&svg)]);
    let plan: PlanResult = serde_json::from_str(&text).unwrap();
    assert_eq!(plan.total_cost, 0.0);
    assert!(plan.accelerations().iter().all(|a| *a == 0.0));
    assert_eq!(serde_json::from_str::<PlanResult>(&serde_json::to_string(&plan).unwrap()).unwrap(), plan);

    let drawn = std::fs::read_to_string(&svg).unwrap();
    let blue = drawn.lines().filter(|l| l.contains("<polyline") && l.contains("#1f77b4")).count();
    assert_eq!(blue, 1, "{drawn}");

    let plan_file = dir.path().join("plan.json");
    std::fs::write(&plan_file, &text).unwrap();
    let rendered = dir.path().join("render.svg");
    ok(&["render", "--scene", s(&scene), "--plan", s(&plan_file), "--track", "1", "--out", s(&rendered)]);
    let bytes = std::fs::read_to_string(&rendered).unwrap();
    roxmltree::Document::parse(&bytes).unwrap();
    assert_eq!(bytes, drawn);

    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/empty_road_plan.svg");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &bytes).unwrap();
    }
    assert_eq!(bytes, std::fs::read_to_string(&golden).unwrap(), "render differs from {}", golden.display());
}

#[test]
fn blocked_plan_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let scene = lane_scene(
        &dir.path().join("scene"),
        vec![straight_track(1, 20.0, 8.0, 100), straight_track(2, 40.0, -8.0, 100)],
    );
    let out = bin(&["plan", "--scene", s(&scene), "--track", "1"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_table_agrees_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    ok(&["gen", "--kind", "merging", "--vehicles", "8", "--seed", "4", "--out", s(&scene)]);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL_RUN).unwrap();
    let json_file = dir.path().join("metrics.json");
    let rollouts = dir.path().join("rollouts.jsonl");
    let text = ok(&[
        "eval", "--scene", s(&scene), "--config", s(&cfg), "--json", s(&json_file), "--rollouts", s(&rollouts),
    ]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    let m: Metrics = serde_json::from_str(lines[2]).unwrap();
    let values: Vec<&str> = lines[1].split_whitespace().collect();
    assert_eq!(values[0], m.episodes.to_string());
    for (shown, rate) in values[1..].iter().zip([m.suc_rate, m.fail_v_rate, m.fail_c_rate, m.timeout_rate]) {
        assert_eq!(*shown, format!("{rate:.4}"));
    }
    assert!((m.suc_rate + m.fail_v_rate + m.fail_c_rate + m.timeout_rate - 1.0).abs() < 1e-12);
    assert_eq!(serde_json::from_str::<Metrics>(&std::fs::read_to_string(&json_file).unwrap()).unwrap(), m);

    let svg = dir.path().join("rollout.svg");
    ok(&["render", "--scene", s(&scene), "--rollouts", s(&rollouts), "--episode", "1", "--out", s(&svg)]);
    roxmltree::Document::parse(&std::fs::read_to_string(&svg).unwrap()).unwrap();
}

#[test]
fn eval_without_episodes_fails() {
    let dir = tempfile::tempdir().unwrap();
    let scene = lane_scene(&dir.path().join("scene"), vec![straight_track(1, 20.0, 8.0, 12)]);
    let out = bin(&["eval", "--scene", s(&scene)]);
    assert!(!out.status.success());
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn dagger_writes_outputs_and_resumes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    ok(&["gen", "--kind", "roundabout", "--vehicles", "6", "--seed", "7", "--out", s(&scene)]);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL_RUN).unwrap();
    let full = dir.path().join("full");
    let text = ok(&["dagger", "--scene", s(&scene), "--config", s(&cfg), "--out", s(&full)]);
    assert!(text.contains("success"), "{text}");
    let report = std::fs::read(full.join("report.json")).unwrap();
    let curve = std::fs::read_to_string(full.join("success.svg")).unwrap();
    roxmltree::Document::parse(&curve).unwrap();
    let ckpt = full.join("checkpoints").join("iter-001");
    assert!(ckpt.join("state.json").exists() && ckpt.join("dataset.jsonl").exists());

    let resumed = dir.path().join("resumed");
    ok(&["dagger", "--scene", s(&scene), "--config", s(&cfg), "--out", s(&resumed), "--resume", s(&ckpt)]);
    assert_eq!(std::fs::read(resumed.join("report.json")).unwrap(), report);
}

#[test]
fn strategy_flags() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    ok(&["gen", "--kind", "merging", "--vehicles", "5", "--seed", "2", "--out", s(&scene)]);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL_RUN).unwrap();
    let base = ["dagger", "--scene", s(&scene), "--config", s(&cfg), "--iterations", "1"];
    let adv = dir.path().join("adv");
    ok(&[&base[..], &["--strategy", "adversary", "--out", s(&adv)]].concat());
    let kf = dir.path().join("kf");
    ok(&[&base[..], &["--strategy", "k-failure", "--k", "20", "--out", s(&kf)]].concat());
    assert!(adv.join("report.json").exists() && kf.join("report.json").exists());

    let bad = dir.path().join("bad");
    let out = bin(&[&base[..], &["--strategy", "adversary", "--k", "3", "--out", s(&bad)]].concat());
    assert_eq!(out.status.code(), Some(2));
    assert!(!bad.exists());
}

#[test]
fn invalid_config_exits_two_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    ok(&["gen", "--kind", "merging", "--vehicles", "5", "--seed", "2", "--out", s(&scene)]);
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[planner]\ndt = -1.0\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = bin(&["dagger", "--scene", s(&scene), "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_dir.exists());

    std::fs::write(&cfg, "[planner]\nnot_a_field = 1\n").unwrap();
    let out = bin(&["dagger", "--scene", s(&scene), "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}
