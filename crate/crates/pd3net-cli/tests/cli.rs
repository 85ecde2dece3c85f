//! End-to-end command-line pipeline checks on a miniature configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pd3net")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn pd3net")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "pd3net {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Tiny geometry for fast turnaround: 24x32 frames, eighth-width network.
fn tiny_scene(dir: &Path, seed: u64) -> PathBuf {
    write_config(
        dir,
        &format!("scene_{seed}.cfg"),
        &format!("height = 24\nwidth = 32\nseed = {seed}\nperson_max = 2\n"),
    )
}

fn tiny_train(dir: &Path) -> PathBuf {
    write_config(
        dir,
        "train.cfg",
        "stage1_epochs = 1\nstage2_epochs = 1\nbatch_size = 4\nval_split = 0.25\nseed = 3\n",
    )
}

#[test]
fn pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let scene = tiny_scene(dir, 7);
    let data = dir.join("data");
    ok(&[
        "gen-data",
        "--config",
        scene.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
        "--n",
        "16",
        "--jobs",
        "2",
    ]);
    assert!(data.join("manifest.jsonl").exists());

    let train_cfg = tiny_train(dir);
    let ckpt = dir.join("net.pd3n");
    ok(&[
        "train",
        "--config",
        train_cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--scale",
        "0.125",
    ]);
    assert!(ckpt.exists());
    let log = std::fs::read_to_string(ckpt.with_extension("log.csv")).unwrap();
    assert!(log.starts_with("epoch,stage,train_loss,val_loss,lr"));
    assert_eq!(log.lines().count(), 3, "header plus two epochs");

    // Evaluation prints a JSON report and exits 0 even when metrics are poor.
    let out = ok(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--threshold",
        "0.54",
    ]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["precision", "recall", "f1", "error", "ci95_f1", "n_gt", "n_det"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }

    // Sweep writes a 17-row curve for the default grid and prints the best.
    let curve = dir.join("curve.csv");
    let out = ok(&[
        "sweep",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--t-min",
        "0.1",
        "--t-max",
        "0.9",
        "--step",
        "0.05",
        "--out",
        curve.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&curve).unwrap();
    assert_eq!(text.lines().count(), 18, "header plus 17 samples");
    assert!(String::from_utf8_lossy(&out.stdout).contains("best threshold"));

    // Detect on one of the generated frames.
    let frame = data.join("frame_000000.u16");
    let out = ok(&[
        "detect",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--frame",
        frame.to_str().unwrap(),
        "--threshold",
        "0.54",
    ]);
    let detections: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(detections.is_array());

    // Fine-tune from the checkpoint.
    let tuned = dir.join("tuned.pd3n");
    ok(&[
        "finetune",
        "--config",
        train_cfg.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        tuned.to_str().unwrap(),
    ]);
    assert!(tuned.exists());
}

#[test]
fn gen_data_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let scene = tiny_scene(dir, 12);
    for sub in ["a", "b"] {
        ok(&[
            "gen-data",
            "--config",
            scene.to_str().unwrap(),
            "--out",
            dir.join(sub).to_str().unwrap(),
            "--n",
            "6",
        ]);
    }
    for name in ["manifest.jsonl", "frame_000003.u16"] {
        let a = std::fs::read(dir.join("a").join(name)).unwrap();
        let b = std::fs::read(dir.join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn bench_writes_the_cost_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench.csv");
    ok(&[
        "bench",
        "--kernels",
        "3",
        "--in-depths",
        "2,8",
        "--out-depths",
        "4",
        "--height",
        "8",
        "--width",
        "8",
        "--trials",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "K,d,D,H,W,nparam_conv,nparam_sep,nops_conv,nops_sep,predicted_winner,measured_conv_ns,measured_sep_ns"
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn exit_codes_distinguish_failures() {
    // Unknown flag: usage error, exit 1.
    let out = run(&["eval", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));

    // Unreadable checkpoint: data error, exit 2.
    let tmp = tempfile::tempdir().unwrap();
    let junk = tmp.path().join("junk.pd3n");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let out = run(&[
        "eval",
        "--ckpt",
        junk.to_str().unwrap(),
        "--data",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Threshold outside (0,1): usage error.
    let out = run(&[
        "eval",
        "--ckpt",
        junk.to_str().unwrap(),
        "--data",
        tmp.path().to_str().unwrap(),
        "--threshold",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(1));
}
