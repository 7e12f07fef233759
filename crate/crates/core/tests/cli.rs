use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dexprior::kinematics::{HandChain, JointVector};
use dexprior::pipeline::{RetargetReport, TrainingReport};
use dexprior::trajectory::{read_demo, read_trajectory};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dexprior"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, seed: &str) {
    ok(
        dir,
        &["synth", "--seed", seed, "--out", "data", "--tasks", "1", "--clips", "2", "--demos", "2", "--test", "2", "--frames", "30"],
    );
}

fn report(dir: &Path) -> RetargetReport {
    serde_json::from_str(&fs::read_to_string(dir.join("data/run/retarget_report.json")).unwrap()).unwrap()
}

#[test]
fn synth_round_trip_recovers_wrist_and_fingertips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "3");
    ok(d, &["retarget", "--config", "data/config.json", "--seed", "3"]);
    let r = report(d);
    assert_eq!((r.total, r.failed), (2, 0));

    let chain = HandChain::load(&d.join("data/chain.json")).unwrap();
    for name in ["task0_clip000", "task0_clip001"] {
        let got = read_demo(&d.join(format!("data/run/retargeted/{name}.jsonl"))).unwrap().trajectory;
        let truth = read_trajectory(&d.join(format!("data/truth/{name}.jsonl"))).unwrap();
        assert_eq!(got.len(), truth.len());
        for (a, b) in got.wrist.iter().zip(&truth.wrist) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6, "{name}: wrist {a:?} vs {b:?}");
            }
        }
        // joint angles are not identifiable from keypoints; fingertips are
        for (a, b) in got.hand.iter().zip(&truth.hand) {
            let ka = chain.robot_keypoints(&JointVector(a.clone())).unwrap();
            let kb = chain.robot_keypoints(&JointVector(b.clone())).unwrap();
            for (p, q) in ka.iter().zip(&kb) {
                assert!((p - q).norm() < 5e-3, "{name}: fingertip off by {}", (p - q).norm());
            }
        }
    }
}

#[test]
fn corrupt_clip_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "4");
    fs::write(d.join("data/clips/task0_clip001.jsonl"), "{\"t\": 0.0, \"kp3d\": [[0, 0]]}\nnot json\n").unwrap();
    ok(d, &["retarget", "--config", "data/config.json", "--seed", "4", "--jobs", "2"]);
    let r = report(d);
    assert_eq!((r.total, r.succeeded, r.failed), (2, 1, 1));
    let bad = r.clips.iter().find(|c| !c.ok).unwrap();
    assert!(bad.clip.ends_with("task0_clip001.jsonl"));
    assert!(bad.error.is_some());
    assert!(d.join("data/run/retargeted/task0_clip000.jsonl").exists());
    assert!(!d.join("data/run/retargeted/task0_clip001.jsonl").exists());
}

#[test]
fn empty_clip_list_writes_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "5");
    fs::create_dir_all(d.join("empty")).unwrap();
    fs::write(
        d.join("empty.json"),
        r#"{"chain": "data/chain.json", "key_vectors": "data/key_vectors.json", "paths": {"clips": "empty", "demos": "empty", "out": "out"}}"#,
    )
    .unwrap();
    let stdout = ok(d, &["retarget", "--config", "empty.json", "--seed", "0"]);
    assert!(stdout.contains("0 clips"));
    let r: RetargetReport = serde_json::from_str(&fs::read_to_string(d.join("out/retarget_report.json")).unwrap()).unwrap();
    assert_eq!((r.total, r.succeeded, r.failed), (0, 0, 0));
}

#[test]
fn finetune_without_checkpoint_trains_from_scratch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "6");
    let stdout = ok(d, &["finetune", "--config", "data/config.json", "--manifest", "data/manifest.json", "--seed", "6"]);
    assert!(stdout.contains("scratch"));
    let r: TrainingReport = serde_json::from_str(&fs::read_to_string(d.join("data/run/finetune_report.json")).unwrap()).unwrap();
    assert_eq!(r.init, "scratch");
    assert_eq!(r.samples, 2);
    assert!(r.losses.iter().all(|l| l.is_finite()));
}

#[test]
fn same_seed_gives_identical_synthetic_data() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), "8");
    synth(b.path(), "8");
    for f in ["data/manifest.json", "data/clips/task0_clip000.jsonl", "data/demos/task0_demo000.jsonl", "data/truth/task0_clip001.jsonl"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.json"), r#"{"unknown_field": 1}"#).unwrap();
    let out = run(d, &["validate", "--config", "bad.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = run(d, &["validate", "--config", "missing.json"]);
    assert!(!out.status.success());
}

#[test]
fn validate_accepts_synthetic_workspace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "9");
    ok(d, &["retarget", "--config", "data/config.json", "--seed", "9"]);
    let stdout = ok(d, &["validate", "--config", "data/config.json", "--manifest", "data/manifest.json"]);
    assert_eq!(stdout.trim(), "ok");
}
