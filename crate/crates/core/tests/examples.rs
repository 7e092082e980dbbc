//! Runs the quick examples. `cargo test` compiles every example before the
//! test binaries run, so they sit next to this binary's `deps/` directory.

use std::path::PathBuf;
use std::process::Command;

fn example(name: &str) -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|deps| deps.parent()).unwrap();
    profile_dir.join("examples").join(format!("{name}{}", std::env::consts::EXE_SUFFIX))
}

fn run(name: &str) -> String {
    let path = example(name);
    assert!(path.is_file(), "{} was not built", path.display());
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(&path).arg(dir.path().join("out")).output().unwrap();
    assert!(out.status.success(), "{name} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn synthesize_phantoms() {
    assert!(run("synthesize_phantoms").contains("icm: 6 images"));
}

#[test]
fn rotation_augmentation() {
    assert!(run("rotation_augmentation").contains("36 rotations"));
}

#[test]
fn segmentation_metrics() {
    let out = run("segmentation_metrics");
    assert!(out.lines().any(|l| l.contains("exact") && l.ends_with("best")), "{out}");
    assert!(out.lines().any(|l| l.contains("empty") && l.ends_with("below")), "{out}");
}

#[test]
fn gradient_check() {
    let out = run("gradient_check");
    assert!(out.trim_end().ends_with("pass"), "{out}");
}

#[test]
fn learning_rate_schedule() {
    assert!(run("learning_rate_schedule").contains("stopped after epoch"));
}

#[test]
fn checkpoint_round_trip() {
    let out = run("checkpoint_round_trip");
    assert!(out.contains("predictions identical: true"), "{out}");
    assert!(out.contains("rejected"), "{out}");
}

#[test]
fn render_overlays() {
    assert!(run("render_overlays").contains("wrote"));
}

#[test]
fn predict_probability_maps() {
    let out = run("predict_probability_maps");
    assert!(out.contains("predicted 3 images"), "{out}");
    assert!(!out.contains("matches map: false"), "{out}");
}

#[test]
fn train_on_phantoms() {
    let out = run("train_on_phantoms");
    assert!(out.contains("Dice Coefficient (%)"), "{out}");
}
