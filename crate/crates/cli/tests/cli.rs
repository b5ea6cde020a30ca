use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SYNTH: &str = r#"{"k_base": 3, "k_novel": 2, "n_masks": 200, "masks_per_image": 10}"#;

fn maskgcd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskgcd"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a small synthetic instance to `dir/data` and a file config pointing at it.
fn setup(dir: &Path) -> std::path::PathBuf {
    let synth_cfg = dir.join("synth.json");
    std::fs::write(&synth_cfg, format!(r#"{{"synth": {SYNTH}}}"#)).unwrap();
    let o = maskgcd(&[
        "synth",
        "--config",
        s(&synth_cfg),
        "--seed",
        "3",
        "--out",
        s(&dir.join("data")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = dir.join("run.json");
    std::fs::write(
        &cfg,
        r#"{"k_base": 3, "k_novel": 2, "area_threshold": 0,
            "paths": {"instance_dir": "data", "gt_dir": "data/gt", "ground_truth": "data/ground_truth.ndjson"}}"#,
    )
    .unwrap();
    cfg
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        std::fs::copy(e.path(), to.join(e.file_name())).unwrap();
    }
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("out");
    copy_dir(&dir.path().join("data/gt"), &out.join("maps"));
    let o = maskgcd(&["eval", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value =
        serde_json::from_slice(&std::fs::read(out.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["miou_avg"].as_f64(), Some(1.0));
    assert_eq!(report["miou_novel"].as_f64(), Some(1.0));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = maskgcd(&["synth", "--seed", "7", "--out", s(d)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in [
        "records.ndjson",
        "features.meta.json",
        "features.f32",
        "geometries.ndjson",
        "ground_truth.ndjson",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn run_then_steps_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let full = dir.path().join("full");
    let o = maskgcd(&[
        "run",
        "--config",
        s(&cfg),
        "--out",
        s(&full),
        "--threads",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("miou_avg"));
    let stepped = dir.path().join("stepped");
    for step in [
        "knn",
        "propagate",
        "complete",
        "cluster",
        "assemble",
        "eval",
    ] {
        let o = maskgcd(&[step, "--config", s(&cfg), "--out", s(&stepped)]);
        assert!(o.status.success(), "{step}: {}", stderr(&o));
    }
    for f in ["labels.ndjson", "eval_report.json", "knn.cache"] {
        assert_eq!(
            std::fs::read(full.join(f)).unwrap(),
            std::fs::read(stepped.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn missing_features_is_a_data_error_at_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    std::fs::remove_file(dir.path().join("data/features.f32")).unwrap();
    let o = maskgcd(&[
        "run",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("ingest"), "{}", stderr(&o));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("\"k_base\": 3", "\"k_base\": 3, \"theta\": 2.0");
    std::fs::write(&cfg, text).unwrap();
    let o = maskgcd(&["run", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    std::fs::write(&cfg, r#"{"thetta": 0.1}"#).unwrap();
    assert_eq!(
        maskgcd(&["validate", "--config", s(&cfg)]).status.code(),
        Some(2)
    );
    assert_eq!(
        maskgcd(&["validate", "--config", "/nonexistent.json"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(maskgcd(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn validate_reports_ok() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let o = maskgcd(&["validate", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("valid"));
}

#[test]
fn slic_writes_an_instance() {
    let dir = tempfile::tempdir().unwrap();
    let (h, w) = (24usize, 32usize);
    let mut ppm = format!("P6\n{w} {h}\n255\n").into_bytes();
    for _y in 0..h {
        for x in 0..w {
            let v = if x < w / 2 { 20 } else { 220 };
            ppm.extend([v, v / 2, 255 - v]);
        }
    }
    let image = dir.path().join("img.ppm");
    std::fs::write(&image, ppm).unwrap();
    let records = dir.path().join("records.ndjson");
    let geoms = dir.path().join("geometries.ndjson");
    let o = maskgcd(&[
        "slic",
        "--image",
        s(&image),
        "--segments",
        "6",
        "--out-records",
        s(&records),
        "--out-geometries",
        s(&geoms),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = std::fs::read_to_string(&records).unwrap().lines().count();
    assert!((1..=12).contains(&lines), "{lines} masks");
    assert_eq!(
        std::fs::read_to_string(&geoms).unwrap().lines().count(),
        lines
    );
    assert!(dir.path().join("features.f32").exists());

    let o = maskgcd(&[
        "slic",
        "--image",
        s(&image),
        "--segments",
        "100000",
        "--out-records",
        s(&records),
        "--out-geometries",
        s(&geoms),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
