use std::path::Path;
use std::process::{Command, Output};

use mclf_core::io::{read_image, write_image, ImageKind};
use mclf_core::Tensor;

const BIN: &str = env!("CARGO_BIN_EXE_mclf");

fn mclf(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("MCLF_SEED").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_writes_triples_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = mclf(&["gen", "--n", "8", "--seed", "7", "--size", "32x32", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).trim().ends_with("manifest.json"));
    let files = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(files, 8 * 3 + 1);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let run = |d: &Path, env: Option<&str>, flag: &[&str]| {
        let mut c = Command::new(BIN);
        c.env_remove("MCLF_SEED");
        if let Some(v) = env {
            c.env("MCLF_SEED", v);
        }
        c.args(["gen", "--n", "1", "--size", "32x32", "--out", s(d)]).args(flag);
        assert!(c.output().unwrap().status.success());
        std::fs::read(d.join("sample_0000_vis.ppm")).unwrap()
    };
    assert_eq!(run(&a, Some("5"), &[]), run(&b, None, &["--seed", "5"]));
    assert_ne!(run(&a, Some("5"), &[]), run(&b, None, &["--seed", "6"]));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(mclf(&["gen", "--n", "0"]).status.code(), Some(2));
    assert_eq!(mclf(&["gen", "--n", "1", "--size", "33x32"]).status.code(), Some(2));
    assert_eq!(mclf(&["gen", "--n", "1", "--strength", "1.5"]).status.code(), Some(2));
    assert_eq!(mclf(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn run_with_and_without_mask() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(mclf(&["gen", "--n", "1", "--seed", "2", "--out", s(&data)]).status.success());
    let vis = data.join("sample_0000_vis.ppm");
    let ir = data.join("sample_0000_ir.pgm");
    let mask = data.join("sample_0000_mask.pgm");

    let plain = dir.path().join("plain");
    let out = mclf(&["run", "--vis", s(&vis), "--ir", s(&ir), "--out", s(&plain)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!plain.join("losses.json").exists());
    assert_eq!(read_image(&plain.join("pred-mask.pgm"), ImageKind::PgmMask).unwrap().shape(), &[64, 64]);
    assert_eq!(read_image(&plain.join("fused.pgm"), ImageKind::PgmGray).unwrap().shape(), &[1, 64, 64]);

    let labeled = dir.path().join("labeled");
    let out = mclf(&["run", "--vis", s(&vis), "--ir", s(&ir), "--mask", s(&mask), "--out", s(&labeled)]);
    assert!(out.status.success());
    let losses: serde_json::Value = serde_json::from_slice(&std::fs::read(labeled.join("losses.json")).unwrap()).unwrap();
    for key in ["focal", "iou", "seg", "fus", "total"] {
        assert!(losses[key].is_f64(), "missing {key}");
    }
    // The unlabeled run's outputs do not depend on the mask.
    assert_eq!(
        std::fs::read(plain.join("fused.pgm")).unwrap(),
        std::fs::read(labeled.join("fused.pgm")).unwrap()
    );
}

#[test]
fn mismatched_modalities_fail() {
    let dir = tempfile::tempdir().unwrap();
    let vis = dir.path().join("v.ppm");
    let ir = dir.path().join("i.pgm");
    write_image(&vis, &Tensor::zeros(&[3, 32, 32]), ImageKind::PpmRgb).unwrap();
    write_image(&ir, &Tensor::zeros(&[1, 32, 64]), ImageKind::PgmGray).unwrap();
    let out = mclf(&["run", "--vis", s(&vis), "--ir", s(&ir), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn dataset_run_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let (data, pred, met) = (dir.path().join("d"), dir.path().join("p"), dir.path().join("m"));
    assert!(mclf(&["gen", "--n", "2", "--size", "32x32", "--out", s(&data)]).status.success());
    assert!(mclf(&["run", "--dataset", s(&data), "--size", "32x32", "--out", s(&pred)]).status.success());
    let out = mclf(&["eval", "--pred", s(&pred), "--truth", s(&data), "--out", s(&met)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(m["per_class"].get("background").is_none());

    let with_bg = mclf(&["eval", "--pred", s(&data), "--truth", s(&data), "--include-background", "--out", s(&met)]);
    let m: serde_json::Value = serde_json::from_slice(&with_bg.stdout).unwrap();
    assert_eq!(m["miou"], 1.0);
    assert_eq!(m["per_class"]["background"], 1.0);
    assert!(met.join("metrics.json").exists());
}

#[test]
fn eval_with_nothing_paired_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (p, t) = (dir.path().join("p"), dir.path().join("t"));
    std::fs::create_dir(&p).unwrap();
    std::fs::create_dir(&t).unwrap();
    write_image(&p.join("a_mask.pgm"), &Tensor::zeros(&[2, 2]), ImageKind::PgmMask).unwrap();
    write_image(&t.join("a_mask.pgm"), &Tensor::zeros(&[3, 2]), ImageKind::PgmMask).unwrap();
    let out = mclf(&["eval", "--pred", s(&p), "--truth", s(&t), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("a_mask.pgm"));
}

#[test]
fn corrupted_gradient_is_named() {
    let out = mclf(&["selftest", "--corrupt-gradient"]);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["gradcheck_focal"]);
}
