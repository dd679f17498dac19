use std::path::Path;
use std::process::{Command, Output};

fn chainsfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chainsfm")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_calibrate_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("scene");
    let out = dir.path().join("out");

    let synth = chainsfm(&["synth", "--out", path(&data), "--seed", "3", "--cameras", "5", "--noise-px", "0.3"]);
    assert!(synth.status.success(), "{}", String::from_utf8_lossy(&synth.stderr));
    assert!(String::from_utf8_lossy(&synth.stdout).contains("true ratios"));

    let cal = chainsfm(&["--threads", "2", "calibrate", path(&data), "--out", path(&out)]);
    assert!(cal.status.success(), "{}", String::from_utf8_lossy(&cal.stderr));
    for f in ["poses.txt", "structure.ply", "report.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["triplets"].as_array().unwrap().len(), 3);

    let eval = chainsfm(&["eval", path(&data), "--poses", path(&out.join("poses.txt"))]);
    assert!(eval.status.success());
    let e: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(e["cameras"], 5);
    assert!(e["mean_center_error"].as_f64().unwrap() < 0.05, "{e}");

    let ply = dir.path().join("only.ply");
    let export = chainsfm(&["export", path(&data), "--out", path(&ply), "--no-ba"]);
    assert!(export.status.success());
    assert!(std::fs::read_to_string(&ply).unwrap().starts_with("ply\n"));
}

#[test]
fn bad_input_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = chainsfm(&["calibrate", path(&dir.path().join("nope")), "--out", path(dir.path())]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error: "));

    let data = dir.path().join("scene");
    assert!(chainsfm(&["synth", "--out", path(&data), "--cameras", "3"]).status.success());
    let bad = chainsfm(&["calibrate", path(&data), "--out", path(dir.path()), "--robust", "magic"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("invalid robust method 'magic'"));
}
