use std::path::Path;
use std::process::{Command, Output};

fn crenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crenet")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = crenet(args);
    assert!(
        out.status.success(),
        "crenet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_enhance_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("m.cren");

    let msg = ok(&[
        "synth",
        "--scenes",
        "3",
        "--height",
        "16",
        "--width",
        "16",
        "--out",
        s(&data),
        "--seed",
        "4",
    ]);
    assert!(msg.contains("wrote 3 pairs"));
    assert!(data.join("low/scene_0002.ppm").exists());

    ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&model),
        "--steps",
        "4",
        "--batch",
        "2",
        "--patch",
        "8",
        "--checkpoint-every",
        "2",
        "--report-every",
        "0",
    ]);
    let log = std::fs::read_to_string(dir.path().join("m.cren.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert!(dir.path().join("m.cren.ckpt").exists());

    // Resuming a finished checkpoint to a longer run appends to the log.
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&model),
        "--steps",
        "6",
        "--batch",
        "2",
        "--patch",
        "8",
        "--resume",
        s(&dir.path().join("m.cren.ckpt")),
        "--report-every",
        "0",
    ]);
    let log = std::fs::read_to_string(dir.path().join("m.cren.log.csv")).unwrap();
    assert_eq!(log.lines().last().unwrap().split(',').next(), Some("6"));

    let out = dir.path().join("out.ppm");
    ok(&[
        "enhance",
        "--model",
        s(&model),
        "--in",
        s(&data.join("low/scene_0000.ppm")),
        "--cond",
        "lahe:4",
        "--out",
        s(&out),
    ]);
    let img = crenet::imgio::read_image(&out).unwrap();
    assert_eq!(img.dims(), (16, 16));

    let report = dir.path().join("r.csv");
    let msg = ok(&["eval", "--model", s(&model), "--data", s(&data), "--report", s(&report)]);
    assert!(msg.starts_with("3 scenes"));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().next(), Some("scene,psnr,ssim"));
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
}

#[test]
fn verify_prints_deviations() {
    let msg = ok(&["verify", "--samples", "5000", "--seed", "3"]);
    assert!(msg.contains("max hue deviation"));
}

#[test]
fn bad_input_fails_with_message() {
    let out = crenet(&[
        "enhance",
        "--model",
        "/nonexistent.cren",
        "--in",
        "x.ppm",
        "--out",
        "y.ppm",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = crenet(&["train", "--data", "/tmp", "--out", "/tmp/x", "--alpha-src", "bogus"]);
    assert!(!out.status.success());

    let out = crenet(&[
        "enhance", "--model", "m", "--in", "i", "--out", "o", "--cond", "gamma:-2",
    ]);
    assert!(!out.status.success());
}
