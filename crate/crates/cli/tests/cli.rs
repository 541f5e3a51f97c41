use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lds_core::gen::artificial_construction;
use lds_core::poly::Polynomial;
use num_complex::Complex64;
use serde_json::Value;
use tempfile::TempDir;

const GEN: &str = r#"
[gen]
n = 3
alpha = 0.9
strategy = "l1_ball"
input_dist = "gaussian"
sigma = 0.1
t_len = 40
count = 100
seed = 5
"#;

const TRAIN: &str = r#"
[train]
[train.sgd]
learning_rate = { kind = "constant", eta = 0.01 }
projection = { alpha = 0.9 }

[eval]
t_len = 40
sigma = 0.1
"#;

fn lds(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lds-sgd"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn setup() -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("gen.toml"), GEN).unwrap();
    fs::write(dir.path().join("train.toml"), TRAIN).unwrap();
    ok(&lds(dir.path(), &["--config", "gen.toml", "--out", "data", "gen"]));
    dir
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_coeffs(dir: &Path, name: &str, a: &[f64]) {
    fs::write(dir.join(name), serde_json::to_string(a).unwrap()).unwrap();
}

fn check(dir: &Path, input: &str, alpha: &str, out: &str) -> Value {
    ok(&lds(dir, &["--out", out, "check", "--input", input, "--alpha", alpha]));
    json(&dir.join(out).join("check.json"))
}

#[test]
fn gen_writes_dataset_and_is_reproducible() {
    let dir = setup();
    let data = dir.path().join("data");
    let manifest = json(&data.join("manifest.json"));
    let names = manifest["trajectories"].as_array().unwrap();
    assert_eq!(names.len(), 100);
    assert!(manifest["acquiescence"]["member"].as_bool().unwrap());
    for name in names {
        assert!(data.join(name.as_str().unwrap()).exists());
    }
    ok(&lds(dir.path(), &["--config", "gen.toml", "--out", "again", "gen"]));
    for entry in fs::read_dir(&data).unwrap() {
        let name = entry.unwrap().file_name();
        let a = fs::read(data.join(&name)).unwrap();
        let b = fs::read(dir.path().join("again").join(&name)).unwrap();
        if name != "config.effective.toml" {
            assert!(a == b, "{name:?} differs between runs");
        }
    }
}

#[test]
fn seed_flag_changes_the_teacher() {
    let dir = setup();
    ok(&lds(dir.path(), &["--config", "gen.toml", "--out", "other", "--seed", "6", "gen"]));
    let a = fs::read(dir.path().join("data/teacher.json")).unwrap();
    let b = fs::read(dir.path().join("other/teacher.json")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn zero_coefficients_have_positive_margins() {
    let dir = TempDir::new().unwrap();
    write_coeffs(dir.path(), "a.json", &[0.0, 0.0, 0.0]);
    let r = check(dir.path(), "a.json", "1.0", "out");
    assert!(r["acquiescence"]["member"].as_bool().unwrap());
    for key in ["worst_slope", "worst_lower", "worst_upper"] {
        assert!(r["acquiescence"][key].as_f64().unwrap() > 0.0, "{key}");
    }
    assert!(r["polytope_member"].as_bool().unwrap());
}

#[test]
fn colliding_roots_are_rejected_with_an_angle() {
    let dir = TempDir::new().unwrap();
    let p = Polynomial::from_roots(&[Complex64::new(0.99, 0.0); 8]);
    let a: Vec<f64> = p.coeffs()[..8].iter().rev().copied().collect();
    write_coeffs(dir.path(), "a.json", &a);
    let out = lds(dir.path(), &["--out", "out", "check", "--input", "a.json", "--alpha", "1"]);
    let text = ok(&out);
    let member = text.lines().find(|l| l.starts_with("member")).unwrap();
    assert!(member.ends_with("false"), "{member}");
    let angle = text.lines().find(|l| l.starts_with("worst_angle")).unwrap();
    let theta: f64 = angle.split_whitespace().last().unwrap().parse().unwrap();
    assert!((0.0..2.0 * std::f64::consts::PI).contains(&theta));
}

#[test]
fn artificial_teacher_needs_the_extension() {
    let dir = TempDir::new().unwrap();
    let (n, alpha) = (6, 0.7);
    let (p, u) = artificial_construction(n, alpha).unwrap();
    let monic = |q: &Polynomial| -> Vec<f64> {
        let c = q.coeffs();
        let lead = c[c.len() - 1];
        c[..c.len() - 1].iter().rev().map(|v| v / lead).collect()
    };
    write_coeffs(dir.path(), "p.json", &monic(&p));
    write_coeffs(dir.path(), "pu.json", &monic(&p.mul(&u)));
    let r = check(dir.path(), "p.json", "0.95", "p");
    assert_eq!(r["n"], n);
    assert!(!r["acquiescence"]["member"].as_bool().unwrap());
    let r = check(dir.path(), "pu.json", "0.95", "pu");
    assert_eq!(r["n"], n + 3);
    assert!(r["acquiescence"]["member"].as_bool().unwrap());
}

#[test]
fn eval_of_teacher_against_itself() {
    let dir = setup();
    ok(&lds(
        dir.path(),
        &["--config", "train.toml", "--out", "ev", "eval", "--model", "data/teacher.json", "--teacher", "data/teacher.json"],
    ));
    let r = json(&dir.path().join("ev/eval.json"));
    assert_eq!(r["idealized_time"].as_f64().unwrap(), 0.0);
    assert!(r["idealized_freq"].as_f64().unwrap().abs() <= 1e-14);
    assert!((r["population"].as_f64().unwrap() - 0.01).abs() <= 1e-15);
    assert_eq!(r["population_longer"].as_array().unwrap().len(), 2);
    assert!(r["errors"].as_array().unwrap().is_empty());
}

#[test]
fn proper_training_lowers_excess_risk() {
    let dir = setup();
    ok(&lds(dir.path(), &["--config", "train.toml", "--out", "run", "train", "--data", "data"]));
    let s = json(&dir.path().join("run/summary.json"));
    assert_eq!(s["steps"], 100);
    assert!(s["final_excess_risk"].as_f64().unwrap() < s["initial_excess_risk"].as_f64().unwrap());
    let history = fs::read_to_string(dir.path().join("run/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 101);
    assert!(dir.path().join("run/model.json").exists());
}

#[test]
fn split_training_uses_every_chunk() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("gen.toml"), GEN.replace("t_len = 40", "t_len = 64")).unwrap();
    fs::write(dir.path().join("train.toml"), TRAIN).unwrap();
    ok(&lds(dir.path(), &["--config", "gen.toml", "--out", "data", "gen"]));
    ok(&lds(dir.path(), &["--config", "train.toml", "--out", "run", "train", "--data", "data", "--mode", "split"]));
    // chunks of β n = 30 leave two per trajectory of length 64
    let s = json(&dir.path().join("run/summary.json"));
    assert_eq!(s["steps"], 200);
    let history = fs::read_to_string(dir.path().join("run/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 201);
}

#[test]
fn training_is_reproducible() {
    let dir = setup();
    for out in ["a", "b"] {
        ok(&lds(dir.path(), &["--config", "train.toml", "--out", out, "train", "--data", "data", "--mode", "improper"]));
    }
    for file in ["model.json", "history.csv", "summary.json"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(file)).unwrap(),
            fs::read(dir.path().join("b").join(file)).unwrap(),
            "{file}"
        );
    }
    assert_eq!(json(&dir.path().join("a/summary.json"))["model_order"], 6);
}

#[test]
fn linreg_reports_a_residual() {
    let dir = setup();
    ok(&lds(dir.path(), &["--config", "train.toml", "--out", "lr", "--format", "csv", "train", "--data", "data", "--mode", "linreg"]));
    let summary = fs::read_to_string(dir.path().join("lr/summary.csv")).unwrap();
    let residual: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("linreg_residual,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(residual.is_finite() && residual > 0.0);
    assert!(dir.path().join("lr/linreg.json").exists());
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(lds(dir.path(), &["--bogus"]).status.code(), Some(1));
    assert_eq!(lds(dir.path(), &["check"]).status.code(), Some(1));
    assert_eq!(lds(dir.path(), &["check", "--input", "missing.json"]).status.code(), Some(3));
    assert_eq!(lds(dir.path(), &["--jobs", "0", "check", "--input", "x"]).status.code(), Some(1));
    fs::write(dir.path().join("bad.json"), "{not json").unwrap();
    assert_eq!(lds(dir.path(), &["check", "--input", "bad.json"]).status.code(), Some(3));
    fs::write(dir.path().join("bad.toml"), "seed = \"x\"").unwrap();
    assert_eq!(lds(dir.path(), &["--config", "bad.toml", "gen"]).status.code(), Some(1));
    assert_eq!(lds(dir.path(), &["train", "--data", "."]).status.code(), Some(1));
    assert_eq!(lds(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn divergence_is_a_numerical_failure() {
    let dir = setup();
    let cfg = TRAIN.replace("eta = 0.01", "eta = 1e6").replace("projection = { alpha = 0.9 }\n", "");
    fs::write(dir.path().join("wild.toml"), cfg).unwrap();
    let out = lds(dir.path(), &["--config", "wild.toml", "--out", "run", "train", "--data", "data"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
