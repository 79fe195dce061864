use std::fs;
use std::path::Path;

use remote_arousal::cli::run;

fn arousal(args: &[&str]) -> i32 {
    run(std::iter::once("arousal").chain(args.iter().copied()))
}

const TINY: &str = r#"
[synth]
duration_s = 60.0
fs_video = 10.0
frame_size = 24
pinch_intervals = []

[prepare.crop]
output_size = 16

[model]
t = 32
reduction = 4
widths = [2, 3, 4]
input_size = 16

[train]
epochs = 1
seeds = [0]
target_kind = "raw"
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(arousal(&["--help"]), 0);
    assert_eq!(arousal(&["train", "--help"]), 0);
    assert_eq!(arousal(&["frobnicate"]), 2);
    assert_eq!(arousal(&["train"]), 2);
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    let unknown = write(dir.path(), "a.toml", "[model]\nwidth = 3\n");
    assert_eq!(arousal(&["synth", "--config", &unknown, "--out", out]), 2);
    let invalid = write(dir.path(), "b.toml", "[train]\nepochs = 0\n");
    assert_eq!(arousal(&["synth", "--config", &invalid, "--out", out]), 2);
    let mismatch = write(dir.path(), "c.toml", "[model]\ninput_size = 36\n");
    assert_eq!(arousal(&["synth", "--config", &mismatch, "--out", out]), 2);
    assert_eq!(arousal(&["report", dir.path().join("missing.csv").to_str().unwrap()]), 1);
}

#[test]
fn synth_preprocess_train_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    assert_eq!(arousal(&["synth", "--config", &cfg, "--participants", "3", "--seed", "7", "--out", &d("raw")]), 0);
    assert!(dir.path().join("raw/S000/meta.json").is_file());
    assert!(dir.path().join("raw/manifest.json").is_file());
    assert_eq!(arousal(&["preprocess", &d("raw"), "--config", &cfg, "--out", &d("prep")]), 0);
    for run_dir in ["run1", "run2"] {
        assert_eq!(arousal(&["train", &d("prep"), "--config", &cfg, "--seed", "3", "--out", &d(run_dir)]), 0);
    }
    let csv = |r: &str| fs::read(dir.path().join(r).join("results_T32_raw.csv")).unwrap();
    assert_eq!(csv("run1"), csv("run2"));
    let text = String::from_utf8(csv("run1")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("participant,seed,rho_raw,rho_tonic"));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run1/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    let ckpt = dir.path().join("run1/T32/raw/seed3/S001.ckpt");
    assert_eq!(
        arousal(&[
            "evaluate",
            &d("prep"),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--participant",
            "S001",
            "--target",
            "raw",
            "--out",
            &d("eval.json"),
        ]),
        0
    );
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(d("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["participant_id"], "S001");

    let results = dir.path().join("run1/results_T32_raw.csv");
    assert_eq!(arousal(&["report", results.to_str().unwrap(), "--out", &d("table.md")]), 0);
    assert!(fs::read_to_string(d("table.md")).unwrap().contains("| Ours | 32 |"));
    assert_eq!(arousal(&["train", &d("prep"), "--config", &cfg, "--T", "64", "--out", &d("run3")]), 2);
}

#[test]
fn stress_from_contact_signals() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let cfg = write(
        dir.path(),
        "s.toml",
        "[synth]\nfs_video = 10.0\nframe_size = 8\npinch_step_us = 2.0\ntonic_walk_us = 0.5\n\n[stress]\nrounds = 20\n",
    );
    assert_eq!(arousal(&["synth", "--config", &cfg, "--participants", "3", "--out", &d("raw")]), 0);
    assert_eq!(arousal(&["stress", &d("raw"), "--config", &cfg, "--out", &d("st")]), 0);
    let features = fs::read_to_string(dir.path().join("st/features.csv")).unwrap();
    assert_eq!(features.lines().count(), 1 + 3 * 19);
    let table = fs::read_to_string(dir.path().join("st/stress.md")).unwrap();
    assert!(table.contains("| Baseline | - | 0.50 | 0.00 |"));
    assert!(table.contains("GB eda_only"));
    assert_eq!(arousal(&["stress", &d("raw"), "--source", "camera", "--out", &d("st2")]), 2);
}
