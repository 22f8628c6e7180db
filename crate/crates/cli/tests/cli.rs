use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use uvmakeup_core::metrics::EvalReport;
use uvmakeup_core::Image;

/// Runs the binary in `dir` with whitespace-separated `args`.
fn uvmakeup(args: &str, dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uvmakeup"))
        .args(args.split_whitespace())
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

/// Runs a command that must succeed and parses its JSON stdout.
fn ok(args: &str, dir: &Path) -> Value {
    let out = uvmakeup(args, dir);
    assert!(out.status.success(), "`{args}` failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("`{args}` stdout is not JSON ({e})"))
}

/// Runs a command that must fail and parses the JSON error on stderr.
fn fails(args: &str, dir: &Path) -> Value {
    let out = uvmakeup(args, dir);
    assert!(!out.status.success(), "`{args}` unexpectedly succeeded");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().unwrap_or_default();
    serde_json::from_str(last).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {stderr}"))
}

#[test]
fn synthesis_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok("gen-faces --n 4 --seed 3 --out faces", d);
    ok("gen-stickers --n 4 --seed 3 --out stickers", d);
    assert!(d.join("faces/face-000.png").exists() && d.join("faces/face-000.uvpm").exists());

    let a = ok("synth1 --faces faces --stickers stickers --n 6 --seed 9 --out a", d);
    let b = ok("synth1 --faces faces --stickers stickers --n 6 --seed 9 --out b", d);
    assert_eq!(a["samples"], 6);
    assert_eq!(a["checksum"], b["checksum"]);

    // an existing dataset is never overwritten
    let err = fails("synth1 --faces faces --stickers stickers --n 6 --out a", d);
    assert!(err["category"].is_string() && err["message"].is_string());

    ok("gen-faces --n 2 --seed 4 --out styles --styles", d);
    let t = ok("synth2 --faces faces --styles styles --stickers stickers --n 3 --out t", d);
    assert_eq!(t["samples"], 3);
}

#[test]
fn train_transfer_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok("gen-faces --n 4 --seed 1 --out plain", d);
    ok("gen-faces --n 4 --seed 2 --out makeup --styles", d);
    ok("gen-stickers --n 4 --seed 1 --out stickers", d);
    ok("synth1 --faces plain --stickers stickers --n 8 --seed 1 --out seg", d);

    std::fs::write(
        d.join("color.toml"),
        "plain = \"plain\"\nmakeup = \"makeup\"\nout = \"models\"\nepochs = 1\niterations_per_epoch = 2\nbatch_size = 1\n",
    )
    .unwrap();
    let c = ok("train-color --config color.toml", d);
    assert_eq!(c["iterations"], 2);
    std::fs::write(d.join("seg.toml"), "dataset = \"seg\"\nout = \"models\"\nepochs = 1\nbatch_size = 4\n").unwrap();
    ok("train-pattern --config seg.toml", d);
    assert!(d.join("models/color.ckpt").exists() && d.join("models/pattern.ckpt").exists());

    let args = "transfer --source plain/face-000.png --reference makeup/style-001.png";
    let first = ok(&format!("{args} --out out1.png --dump-intermediates dump"), d);
    ok(&format!("{args} --out out2.png"), d);
    assert!(first["timings_ms"]["fusion"].is_number());
    assert_eq!(std::fs::read(d.join("out1.png")).unwrap(), std::fs::read(d.join("out2.png")).unwrap());
    for f in ["source_texture.png", "reference1_texture.png", "color1_texture.png", "pattern_mask.png", "meta.json"] {
        assert!(d.join("dump").join(f).exists(), "missing {f}");
    }
    let out = Image::load(d.join("out1.png")).unwrap();
    assert_eq!(out.dims(), (256, 256));

    let s = ok("eval --task seg --dataset seg --report seg.jsonl", d);
    let miou = s["aggregate"]["miou"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&miou));
    let report = EvalReport::load(d.join("seg.jsonl")).unwrap();
    assert_eq!(report.records.len(), report.summary.samples);

    ok("synth2 --faces plain --styles makeup --stickers stickers --n 2 --models models --out tri", d);
    let s = ok("eval --task transfer --dataset tri --report tri.jsonl", d);
    assert_eq!(s["samples"], 2);
    for key in ["ms_ssim", "identity", "hist_lips", "hist_skin"] {
        assert!(s["aggregate"][key].is_number(), "missing {key}: {s}");
    }
}

#[test]
fn failures_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok("gen-faces --n 1 --out faces", d);
    Image::filled(256, 256, [0.5; 3]).save_png(d.join("blank.png")).unwrap();

    let err =
        fails("transfer --source blank.png --reference faces/face-000.png --out o.png --no-color --no-pattern", d);
    assert_eq!(err["category"], "geometry");
    assert_eq!(err["detail"]["input"], "source");

    let err = fails("transfer --source faces/face-000.png --reference faces/face-000.png --out o.png --models none", d);
    assert_eq!(err["category"], "model-missing");

    let err = fails(
        "transfer --source faces/face-000.png --reference faces/face-000.png --out o.png --alpha 3 --no-color --no-pattern",
        d,
    );
    assert_eq!(err["category"], "invalid-input");

    std::fs::write(d.join("bad.toml"), "plain = 3\n").unwrap();
    let err = fails("train-color --config bad.toml", d);
    assert_eq!(err["category"], "config");
    let err = fails("train-color --config missing.toml", d);
    assert_eq!(err["category"], "config");
}
