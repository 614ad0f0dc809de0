use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use strokeseg::io::write_mask;
use strokeseg::model::{Extents, LabelMask, LabelSchema, Spacing};

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.json")
}

fn strokeseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_strokeseg"))
        .current_dir(dir)
        .env_remove("STROKESEG_CACHE_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_line(out: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {err}"))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

#[test]
fn phantom_generation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&strokeseg(dir.path(), &["phantom", "--cases", "3", "--out", out, "--seed", "11"]));
    }
    let (a, b) = (tree(&dir.path().join("a")), tree(&dir.path().join("b")));
    assert_eq!(a.len(), 7);
    assert_eq!(a, b);
}

#[test]
fn mismatched_prediction_extents_exit_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(&strokeseg(dir.path(), &["phantom", "--cases", "2", "--out", "raw", "--seed", "1", "--folds", "0"]));
    let sp = Spacing::isotropic(1.0).unwrap();
    for (id, e) in [("case_000", Extents::new(8, 40, 40)), ("case_001", Extents::new(8, 40, 39))] {
        let m = LabelMask::zeros(e, sp, LabelSchema::binary("lesion")).unwrap();
        write_mask(&m, dir.path().join("pred").join(format!("{id}.nii.gz"))).unwrap();
    }
    let out = strokeseg(
        dir.path(),
        &["evaluate", "--set", "paths.raw_data=raw", "--set", "paths.reports=rep", "--predictions", "pred"],
    );
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["error"], "data");
    assert_eq!(e["case_id"], "case_001");
    assert!(e["message"].as_str().unwrap().contains("case_001"));
}

#[test]
fn config_and_usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = strokeseg(dir.path(), &["train", "--set", "train.epochs=0"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "config");
    let out = strokeseg(dir.path(), &["train", "--set", "preprocess.patch_size=[500,500]"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("128"));
    assert_eq!(strokeseg(dir.path(), &["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(strokeseg(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = strokeseg(dir.path(), &["preprocess", "--set", "paths.raw_data=nowhere"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "data");
}

#[test]
fn toy_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config();
    let cfg = cfg.to_str().unwrap();
    ok(&strokeseg(dir.path(), &["phantom", "--cases", "8", "--out", "runs/toy/raw", "--seed", "7", "--slices", "3"]));
    for step in [&["preprocess"][..], &["train"], &["predict"], &["evaluate"], &["report", "--overlays"]] {
        let mut args = vec!["--config", cfg];
        args.extend_from_slice(step);
        ok(&strokeseg(dir.path(), &args));
    }
    let reports = dir.path().join("runs/toy/reports");
    let agg: serde_json::Value = serde_json::from_slice(&std::fs::read(reports.join("aggregate.json")).unwrap()).unwrap();
    let mean = agg["mean_dice"].as_f64().unwrap();
    assert!(mean > 0.9, "mean dice {mean}");
    assert_eq!(agg["n_cases"], 8);
    let md = std::fs::read_to_string(reports.join("results.md")).unwrap();
    assert!(md.contains("Mean Dice Score"));
    assert_eq!(std::fs::read_dir(reports.join("overlays")).unwrap().count(), 8);
    // predictions come back in the original geometry
    let pred = strokeseg::io::read_mask(
        dir.path().join("runs/toy/predictions/case_000.nii.gz"),
        &LabelSchema::binary("lesion"),
    )
    .unwrap();
    assert_eq!(pred.extents(), Extents::new(3, 40, 40));
}
