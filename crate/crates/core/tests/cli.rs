//! End-to-end runs of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

fn avtr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avtr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn synth_small(dir: &Path, seed: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "synth",
        "--out",
        "data",
        "--triplets",
        "12",
        "--gallery-extra",
        "4",
        "--dim",
        "16",
        "--audio-dim",
        "12",
        "--frames",
        "3",
        "--audio-len",
        "4",
        "--seed",
        seed,
    ];
    args.extend_from_slice(extra);
    avtr(&args, dir)
}

#[test]
fn synth_train_eval_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let out = synth_small(dir, "7", &[]);
    assert!(out.status.success(), "synth failed: {:?}", out);
    assert!(dir.join("data/manifest.jsonl").exists());
    assert!(dir.join("data/config.json").exists());

    let out = avtr(
        &[
            "train",
            "--data",
            "data",
            "--out",
            "run",
            "--epochs",
            "2",
            "--batch",
            "4",
            "--lr",
            "1e-4",
            "--seed",
            "3",
            "--layers",
            "1",
            "--audio-tokens",
            "2",
            "--mlp-hidden",
            "8",
        ],
        dir,
    );
    assert!(
        out.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.join("run/checkpoint.avck").exists());
    assert!(dir.join("run/trainlog.jsonl").exists());
    assert!(dir.join("run/config.json").exists());

    let out = avtr(
        &[
            "eval",
            "--data",
            "data",
            "--ckpt",
            "run/checkpoint.avck",
            "--out",
            "evalout",
        ],
        dir,
    );
    assert!(
        out.status.success(),
        "eval failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.join("evalout/metrics.json").exists());
    let metrics = std::fs::read_to_string(dir.join("evalout/metrics.json")).unwrap();
    assert!(metrics.contains("\"mnr\""), "metrics: {}", metrics);
}

#[test]
fn train_is_reproducible_at_cli_level() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(synth_small(dir, "11", &[]).status.success());

    for run in ["a", "b"] {
        let out = avtr(
            &[
                "train", "--data", "data", "--out", run, "--epochs", "1", "--batch", "4",
                "--seed", "5", "--layers", "1", "--audio-tokens", "2", "--mlp-hidden", "8",
            ],
            dir,
        );
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.join("a/checkpoint.avck")).unwrap();
    let b = std::fs::read(dir.join("b/checkpoint.avck")).unwrap();
    assert_eq!(a, b, "checkpoints differ between identical runs");
}

#[test]
fn dedup_and_mine_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = synth_small(dir, "13", &["--clips", "24"]);
    assert!(out.status.success());
    assert!(dir.join("data/clips.jsonl").exists());

    let out = avtr(
        &[
            "dedup",
            "--manifest",
            "data/clips.jsonl",
            "--out",
            "data/clips.dedup.jsonl",
        ],
        dir,
    );
    assert!(
        out.status.success(),
        "dedup failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let retained = std::fs::read_to_string(dir.join("data/clips.dedup.jsonl")).unwrap();
    let n_kept = retained.lines().count();
    assert!(n_kept > 0 && n_kept < 24, "dedup kept {}", n_kept);

    let out = avtr(
        &[
            "mine",
            "--manifest",
            "data/clips.dedup.jsonl",
            "--out",
            "data/pairs.jsonl",
        ],
        dir,
    );
    assert!(
        out.status.success(),
        "mine failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let pairs = std::fs::read_to_string(dir.join("data/pairs.jsonl")).unwrap();
    assert!(!pairs.is_empty());
    // pairs carry empty caption payloads for the external captioning steps
    let first: serde_json::Value = serde_json::from_str(pairs.lines().next().unwrap()).unwrap();
    assert_eq!(first["captions"]["video_a"], "");
    assert_eq!(first["modification"]["object"], "");
    assert!(first["band"].is_string());
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(synth_small(dir, "17", &[]).status.success());
    let out = avtr(
        &["eval", "--data", "data", "--ckpt", "nope.avck", "--out", "e"],
        dir,
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("checkpoint not found"), "stderr: {}", err);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = avtr(&["synth", "--does-not-exist", "3"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = avtr(&["conjure"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_subcommand_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = avtr(&["gradcheck", "--seeds", "1"], tmp.path());
    assert!(
        out.status.success(),
        "gradcheck failed: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("all") && stdout.contains("checks passed"));
}
