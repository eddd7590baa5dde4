use std::path::Path;
use std::process::{Command, Output};

use patk_core::tensorio::read_image;

fn patk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patk")).args(args).output().expect("spawn patk")
}

fn ok(args: &[&str]) -> Output {
    let out = patk(args);
    assert!(out.status.success(), "patk {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_DATASET: &str = r#"
n_train = 2
n_val = 1
n_test = 2
seed = 3
crop_px = 32

[phantom.grid]
rows = 64
cols = 64
pitch = 8e-5
origin_x = -0.00252
origin_z = 0.00348

[probe]
n_elements = 32
n_samples = 512
"#;

#[test]
fn small_dataset_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("ds.toml");
    std::fs::write(&cfg, SMALL_DATASET).unwrap();
    let root = tmp.path().join("ds");
    ok(&["dataset", "--config", s(&cfg), "--out", s(&root)]);
    for i in 0..5 {
        let input = read_image(&root.join(format!("inputs/{i:04}.patk"))).unwrap();
        let target = read_image(&root.join(format!("targets/{i:04}.patk"))).unwrap();
        assert_eq!(input.dim(), (32, 32));
        assert_eq!(target.dim(), (32, 32));
    }
    assert!(root.join("manifest").is_file());

    // refuses to clobber, unless forced
    let again = patk(&["dataset", "--config", s(&cfg), "--out", s(&root)]);
    assert!(!again.status.success());
    ok(&["dataset", "--config", s(&cfg), "--force", "--out", s(&root)]);

    let m = tmp.path().join("m");
    ok(&["metrics", "--dataset", s(&root), "--label", "dmbf", "--out", s(&m)]);
    let table = std::fs::read_to_string(m.join("table.txt")).unwrap();
    assert!(table.contains("dmbf"), "{table}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(m.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pairs"].as_array().unwrap().len(), 2);
}

#[test]
fn panel_width_is_sum_of_tiles() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["phantom", "--size", "48", "--pitch", "1e-4", "--seed", "1", "--out", s(&a)]);
    ok(&["phantom", "--size", "64", "--pitch", "1e-4", "--seed", "2", "--out", s(&b)]);
    let p = tmp.path().join("p");
    ok(&["panel", "--inputs", s(&a.join("phantom.patk")), s(&b.join("phantom.patk")), "--out", s(&p)]);
    let panel = read_image(&p.join("panel.patk")).unwrap();
    assert_eq!(panel.dim(), (64, 112));
    assert!(p.join("panel.png").is_file());

    let five: Vec<String> = (0..5).map(|_| a.join("phantom.patk").display().to_string()).collect();
    let mut args = vec!["panel", "--inputs"];
    args.extend(five.iter().map(String::as_str));
    args.extend(["--out", s(&p)]);
    assert!(!patk(&args).status.success());
}

#[test]
fn invalid_config_reports_every_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "n_test = 0\ncrop_px = 0\ngt_threshold = 2.0\n[probe]\nn_elements = 0\n").unwrap();
    let out = patk(&["dataset", "--config", s(&cfg), "--out", s(&tmp.path().join("ds"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    for field in ["n_test", "crop_px", "gt_threshold", "n_elements"] {
        assert!(err.contains(field), "missing {field} in: {err}");
    }
    assert!(!tmp.path().join("ds").join("manifest").exists());
}

#[test]
fn failures_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.patk");
    let out = patk(&["beamform", "--rf", s(&missing), "--out", s(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    // unknown penalty is rejected at parse time
    assert!(!patk(&["deconv", "--rf", s(&missing), "--penalty", "l1", "--out", s(tmp.path())]).status.success());
    // sweep without ground truth
    assert!(!patk(&["deconv", "--rf", s(&missing), "--sweep", "--out", s(tmp.path())]).status.success());
}

#[test]
fn beamform_reports_short_records() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    ok(&["phantom", "--size", "48", "--pitch", "1e-4", "--depth", "8e-3", "--seed", "4", "--out", s(&ph)]);
    let sim = tmp.path().join("sim");
    let obj = ph.join("phantom.patk");
    // far too few samples for an 8 mm deep object
    let short = patk(&["simulate", "--object", s(&obj), "--elements", "16", "--samples", "64", "--out", s(&sim)]);
    assert!(!short.status.success());
    ok(&["simulate", "--object", s(&obj), "--elements", "16", "--samples", "0", "--out", s(&sim)]);
    ok(&["beamform", "--rf", s(&sim.join("rf.patk")), "--kind", "mbf", "--out", s(&tmp.path().join("bf"))]);
}
