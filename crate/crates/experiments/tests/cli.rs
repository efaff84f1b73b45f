use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmd-accel"))
        .args(args)
        .env_remove("PMD_ACCEL_SEED")
        .output()
        .unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn lists_studies() {
    let o = bin(&["list-studies"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 7);
}

#[test]
fn validates_examples() {
    for id in ["i", "ii", "iii", "iv"] {
        let o = bin(&["validate", fixture(&format!("example_{id}.json")).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{id}");
        assert!(stdout(&o).starts_with("ok: 2 states"));
    }
}

#[test]
fn rejects_bad_input() {
    assert_eq!(bin(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(bin(&["validate", "/nonexistent.json"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.toml");
    std::fs::write(&spec, "study = \"sweep_k\"\nalgorithms = [\"pmd\"]\nT = 0\nseeds = 1\n").unwrap();
    assert_eq!(bin(&["run", spec.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&spec, "study = \"nope\"").unwrap();
    assert_eq!(bin(&["run", spec.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn evaluates_a_policy() {
    let o = bin(&[
        "evaluate",
        fixture("example_i.json").to_str().unwrap(),
        fixture("policy_uniform_2x2.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let d: Vec<f64> = serde_json::from_value(v["visitation"].clone()).unwrap();
    assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(v["kappa"].as_f64().unwrap() >= 1.0);
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(
        &spec,
        r#"
study = "inexact_controlled"
algorithms = ["pmd"]
mdp_source = { example = "iii" }
T = 4
seeds = 2
[hyperparameters]
k = 3
tau = 0.1
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = bin(&["--seed", "9", "--out", out.to_str().unwrap(), "run", spec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("results.csv").exists());
    assert!(out.join("summary.json").exists());
}

#[test]
fn polytope_command_prints_points() {
    let o = bin(&["polytope", "i", "--resolution", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("kind,v_s1,v_s2"));
    assert_eq!(text.lines().filter(|l| l.starts_with("corner")).count(), 4);
    assert_eq!(bin(&["polytope", "v"]).status.code(), Some(2));
}
