use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ewm_core::closed_loop::{
    run_closed_loop, ActionChunk, Frame, RecordedEpisode, RolloutConfig, ScriptedPolicy, VideoChunk, ViewId,
};
use ewm_core::traj::{DualArmStep, Pose, Trajectory};

fn ewm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ewm"))
        .args(args)
        .output()
        .expect("run ewm")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_traj(path: &Path, offset: f64) {
    let steps = (0..20)
        .map(|i| {
            let x = 0.01 * i as f64 + offset;
            DualArmStep {
                timestamp: i as f64 * 0.1,
                left: Pose::new([x, 0.0, 0.4], [0.0, 0.0, 0.1], 0.5).unwrap(),
                right: Pose::new([-x, 0.1, 0.5], [0.0, 0.2, 0.0], 1.0).unwrap(),
            }
        })
        .collect();
    Trajectory::new(steps).unwrap().save(path).unwrap();
}

fn manifest(dir: &Path, episodes: usize) -> PathBuf {
    let mut list = Vec::new();
    for e in 0..episodes {
        let gt = format!("gt_{e}.csv");
        write_traj(&dir.join(&gt), 0.0);
        let mut samples = Vec::new();
        for k in 0..3 {
            let name = format!("s_{e}_{k}.csv");
            write_traj(&dir.join(&name), 0.001 * (k + e) as f64);
            samples.push(serde_json::json!({ "trajectory": name }));
        }
        list.push(serde_json::json!({
            "episode_id": format!("ep{e}"),
            "task_id": format!("task{}", e % 2),
            "instruction": "wipe the table",
            "gt_trajectory": gt,
            "samples": samples,
        }));
    }
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&list).unwrap()).unwrap();
    path
}

#[test]
fn eval_writes_deterministic_reports() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), 3);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = ewm(&[
        "eval",
        "--manifest",
        s(&m),
        "--out",
        s(&a),
        "--format",
        "csv,json,svg",
        "--workers",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = ewm(&["eval", "--manifest", s(&m), "--out", s(&b), "--format", "csv,json,svg"]);
    assert!(out.status.success());
    for f in ["report.csv", "report.json", "report.svg"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let csv = std::fs::read_to_string(a.join("report.csv")).unwrap();
    assert!(csv.starts_with("model,scope,task_id,episode_id,BLEU,CLIP,DYN,Diversity,SA,Logic,TA,Scene\n"));
    assert_eq!(csv.lines().count(), 1 + 3 + 2 + 1);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), 1);
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "version = 7\n").unwrap();
    let out = ewm(&["eval", "--manifest", s(&m), "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));

    let missing = dir.path().join("none.json");
    let out = ewm(&["eval", "--manifest", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let out = ewm(&["eval", "--manifest", s(&m), "--out", s(dir.path()), "--format", "pdf"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_episode_exits_1_but_reports() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), 2);
    std::fs::write(dir.path().join("s_1_0.csv"), "garbage\n").unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "version = 1\n[voxel]\ncell = 0.1\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = ewm(&[
        "eval",
        "--manifest",
        s(&m),
        "--config",
        s(&cfg),
        "--out",
        s(&out_dir),
        "--format",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("s_1_0.csv"));
    let json = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    assert!(json.contains("\"failed\""));
}

#[test]
fn curate_selects_distinct_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let mut names = Vec::new();
    for (k, off) in [0.0, 0.001, 0.5, 1.0].iter().enumerate() {
        let name = format!("c{k}.csv");
        write_traj(&dir.path().join(&name), *off);
        names.push(name);
    }
    let list = dir.path().join("candidates.txt");
    std::fs::write(&list, names.join("\n")).unwrap();
    let out_dir = dir.path().join("cur");
    let out = ewm(&[
        "curate",
        "--candidates",
        s(&list),
        "--select",
        "3",
        "--cell",
        "0.05",
        "--out",
        s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sel = std::fs::read_to_string(out_dir.join("selection.csv")).unwrap();
    let picked: Vec<usize> = sel
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(picked.len(), 3);
    // the two near-duplicates are never both chosen
    assert!(!(picked.contains(&0) && picked.contains(&1)), "{picked:?}");
    let sim = std::fs::read_to_string(out_dir.join("similarity.csv")).unwrap();
    assert_eq!(sim.lines().count(), 4);

    let out = ewm(&["curate", "--candidates", s(&list), "--select", "9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn human_corr_over_model_reports() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), 2);
    let mut reports = Vec::new();
    for model in ["alpha", "beta", "gamma"] {
        let out_dir = dir.path().join(model);
        let cfg = dir.path().join(format!("{model}.toml"));
        // different DYN weights give different (but same-ordered) scores per model
        let w = match model {
            "alpha" => 0.007,
            "beta" => 0.005,
            _ => 0.001,
        };
        std::fs::write(&cfg, format!("[dyn]\nalpha = {w}\nbeta = 0.0001\n")).unwrap();
        let out = ewm(&[
            "eval",
            "--manifest",
            s(&m),
            "--config",
            s(&cfg),
            "--out",
            s(&out_dir),
            "--format",
            "json",
            "--model",
            model,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        reports.push(out_dir.join("report.json"));
    }
    let ann = dir.path().join("ann.json");
    std::fs::write(
        &ann,
        r#"{"models": ["alpha", "beta", "gamma"],
            "rankings": [{"annotator": "a", "sample": "1", "ranks": [1, 2, 3]},
                         {"annotator": "b", "sample": "1", "ranks": [1, 3, 2]}]}"#,
    )
    .unwrap();
    let mut args = vec!["human-corr", "--annotations", s(&ann), "--method", "kendall"];
    for r in &reports {
        args.extend(["--report", s(r)]);
    }
    let out = ewm(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("metric,kendall\n"), "{text}");
    assert_eq!(text.lines().count(), 9);
    // SA and TA do not depend on the DYN weights, so their ranking is constant
    assert!(text.contains("\nSA,\n"), "{text}");

    std::fs::write(
        &ann,
        r#"{"models": ["alpha", "beta"], "rankings": [{"annotator": "a", "sample": "1", "ranks": [1, 1]}]}"#,
    )
    .unwrap();
    let out = ewm(&["human-corr", "--annotations", s(&ann), "--report", s(&reports[0])]);
    assert_eq!(out.status.code(), Some(2));
}

fn chunk(start: usize) -> VideoChunk {
    VideoChunk {
        steps: (start..start + 3)
            .map(|i| {
                vec![Frame {
                    view: ViewId::Head,
                    index: i,
                    payload: vec![i as u8; 4],
                }]
            })
            .collect(),
    }
}

#[test]
fn rollout_replays_recording() {
    let dir = tempfile::tempdir().unwrap();
    let script = (0..4)
        .map(|_| ActionChunk::new(vec![[0.0; 14]; 18], 30.0).unwrap())
        .collect();
    let mut gen = ewm_core::closed_loop::replay_generator((1..=4).map(|k| chunk(3 * k)).collect()).unwrap();
    let rollout = run_closed_loop(
        &mut ScriptedPolicy::new(script),
        &mut gen,
        "open the drawer",
        chunk(0),
        RolloutConfig {
            max_chunks: 4,
            memory_frames: 2,
        },
    )
    .unwrap();
    let rec = dir.path().join("rec");
    RecordedEpisode::from(rollout).save(&rec).unwrap();

    let replay_dir = dir.path().join("replay");
    let out = ewm(&[
        "rollout",
        "--recording",
        s(&rec),
        "--budget",
        "2",
        "--out",
        s(&replay_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("chunks=2 actions=2") && text.contains("termination=budget"),
        "{text}"
    );
    let saved = RecordedEpisode::load(&replay_dir).unwrap();
    assert_eq!(saved.chunks.len(), 2);

    let out = ewm(&["rollout", "--recording", s(&rec), "--budget", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn render_pose_writes_one_image_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let calib = dir.path().join("cam.json");
    std::fs::write(
        &calib,
        r#"{"fx": 100, "fy": 100, "cx": 32, "cy": 24,
            "extrinsic_rotation": [[1,0,0],[0,1,0],[0,0,1]], "extrinsic_translation": [0,0,0]}"#,
    )
    .unwrap();
    let traj = dir.path().join("t.csv");
    write_traj(&traj, 0.0);
    let out_dir = dir.path().join("img");
    let out = ewm(&[
        "render-pose",
        "--calib",
        s(&calib),
        "--traj",
        s(&traj),
        "--out",
        s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read(out_dir.join("pose_0000.ppm")).unwrap();
    assert!(first.starts_with(b"P6\n64 48\n255\n"));
    assert_eq!(std::fs::read_dir(&out_dir).unwrap().count(), 20);

    std::fs::write(&calib, r#"{"fx": -1, "fy": 100, "cx": 32, "cy": 24, "extrinsic_rotation": [[1,0,0],[0,1,0],[0,0,1]], "extrinsic_translation": [0,0,0]}"#).unwrap();
    let out = ewm(&[
        "render-pose",
        "--calib",
        s(&calib),
        "--traj",
        s(&traj),
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
