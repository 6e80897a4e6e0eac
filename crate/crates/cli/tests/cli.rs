use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const MINIMAL: &str = r#"{
    "name": "denoise",
    "prior": {"kind": "gaussian", "n": 2, "s0": 1.0},
    "noise": {"kind": "gaussian_iso", "sigma": 1.0},
    "estimator": {"kind": "affine"},
    "loss": {"kind": "sure", "backend": {"kind": "analytic"}},
    "data": {"items": 200, "test_items": 500}
}"#;

fn selfsup(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfsup")).args(args).env("SELFSUP_OUT_DIR", out).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn without_timestamp(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timestamp");
    v
}

#[test]
fn run_writes_report_and_curves() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", MINIMAL);
    let o = selfsup(dir.path(), &["run", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = dir.path().join("denoise-s0.json");
    let csv = fs::read_to_string(dir.path().join("denoise-s0.curves.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["loss"], "sure");
    assert!(v["test_mse"].as_f64().unwrap() > 0.0);
}

#[test]
fn runs_are_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let cfg = write_config(a.path(), "c.json", MINIMAL);
    for d in [&a, &b] {
        assert_eq!(selfsup(d.path(), &["run", &cfg]).status.code(), Some(0));
    }
    assert_eq!(without_timestamp(&a.path().join("denoise-s0.json")), without_timestamp(&b.path().join("denoise-s0.json")));
    assert_eq!(
        fs::read(a.path().join("denoise-s0.curves.csv")).unwrap(),
        fs::read(b.path().join("denoise-s0.curves.csv")).unwrap()
    );
}

#[test]
fn invalid_alpha_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let bad = MINIMAL.replace(r#""kind": "sure", "backend": {"kind": "analytic"}"#, r#""kind": "r2r", "alpha": 1.5"#);
    let o = selfsup(dir.path(), &["run", &write_config(dir.path(), "c.json", &bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpha out of (0,1)"), "{}", stderr(&o));
    assert!(fs::read_dir(dir.path()).unwrap().all(|e| e.unwrap().file_name() == "c.json"));
}

#[test]
fn unknown_key_names_its_path() {
    let dir = TempDir::new().unwrap();
    let bad = MINIMAL.replace(r#""sigma": 1.0"#, r#""sigma": 1.0, "colour": 3"#);
    let o = selfsup(dir.path(), &["run", &write_config(dir.path(), "c.json", &bad)]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("noise") && e.contains("colour"), "{e}");
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let o = selfsup(dir.path(), &["run", "/nonexistent/config.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_merges_two_seeds() {
    let dir = TempDir::new().unwrap();
    let cfg1 = write_config(dir.path(), "a.json", MINIMAL);
    let cfg2 = write_config(dir.path(), "b.json", &MINIMAL.replace(r#""name": "denoise","#, r#""name": "denoise", "seed": 1,"#));
    for c in [&cfg1, &cfg2] {
        assert_eq!(selfsup(dir.path(), &["run", c]).status.code(), Some(0));
    }
    let out = dir.path().join("merged.csv");
    let files = [dir.path().join("denoise-s0.json"), dir.path().join("denoise-s1.json")];
    let rows: usize = files
        .iter()
        .map(|f| {
            let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(f).unwrap()).unwrap();
            v["rows"].as_array().unwrap().len()
        })
        .sum();
    let o = selfsup(
        dir.path(),
        &["report", &files[0].to_string_lossy(), &files[1].to_string_lossy(), "--out", &out.to_string_lossy()],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("scenario,seed,method,metric,value,se,pass"));
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), rows);
    assert!(body.iter().any(|l| l.starts_with("denoise,0,")) && body.iter().any(|l| l.starts_with("denoise,1,")));
}

#[test]
fn report_rejects_bad_input() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("m.csv").to_string_lossy().into_owned();
    assert_eq!(selfsup(dir.path(), &["report", "--out", &out]).status.code(), Some(2));
    let junk = write_config(dir.path(), "junk.json", r#"{"rows": "nope"}"#);
    let o = selfsup(dir.path(), &["report", &junk, "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("junk.json"), "{}", stderr(&o));
}

#[test]
fn suites_pass_and_write_results() {
    let dir = TempDir::new().unwrap();
    for name in ["equivalences", "variance"] {
        let o = selfsup(dir.path(), &["suite", name, "--seed", "0"]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&o.stdout));
        assert!(String::from_utf8_lossy(&o.stdout).contains("pass"));
        assert!(dir.path().join(format!("suite-{name}-smoke-s0.json")).exists());
    }
    let merged = dir.path().join("suites.csv");
    let files: Vec<String> =
        ["equivalences", "variance"].iter().map(|n| dir.path().join(format!("suite-{n}-smoke-s0.json")).to_string_lossy().into_owned()).collect();
    let o = selfsup(dir.path(), &["report", &files[0], &files[1], "--out", &merged.to_string_lossy()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(fs::read_to_string(&merged).unwrap().contains(",expected_fail"));
}

#[test]
fn unknown_suite_and_scale_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    assert_eq!(selfsup(dir.path(), &["suite", "nope"]).status.code(), Some(2));
    assert_eq!(selfsup(dir.path(), &["suite", "variance", "--scale", "huge"]).status.code(), Some(2));
}

#[test]
fn diverging_training_exits_with_code_3() {
    let dir = TempDir::new().unwrap();
    let cfg = MINIMAL
        .replace(r#""kind": "sure", "backend": {"kind": "analytic"}"#, r#""kind": "supervised""#)
        .replace(r#""data""#, r#""train": {"optimizer": {"kind": "sgd", "lr": 100.0}, "epochs": 60, "patience": 1000}, "data""#);
    let o = selfsup(dir.path(), &["run", &write_config(dir.path(), "c.json", &cfg)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"), "{}", stderr(&o));
}
