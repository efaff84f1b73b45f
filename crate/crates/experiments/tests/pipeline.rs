use std::fs;
use std::path::Path;

use pmd_core::Critic;
use pmd_experiments::output::{records, summary, write_csv, CellSummary, Record, BASE_COLUMNS, RESULTS_FILE, SUMMARY_FILE};
use pmd_experiments::{run_experiment, run_experiment_with, summarize, write_outputs, ExperimentSpec, Summary};

const GAMMA_SWEEP: &str = r#"
study = "sweep_gamma"
algorithms = ["pi", "pmd", "momentum"]
T = 6
seeds = 3
[hyperparameters]
k = 5
[sweep]
param = "gamma"
values = [0.8, 0.9]
[mdp_source.random]
num_states = 12
num_actions = 3
branching = 3
gamma = 0.9
"#;

const NOISY: &str = r#"
study = "inexact_controlled"
algorithms = ["pmd", "momentum"]
mdp_source = { example = "i" }
T = 10
seeds = 4
[hyperparameters]
k = 10
tau = 0.2
[sweep]
param = "tau"
values = [0.2]
"#;

fn spec(s: &str) -> ExperimentSpec {
    ExperimentSpec::from_toml_str(s).unwrap()
}

fn read_records(path: &Path) -> Vec<Record> {
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

#[test]
fn results_have_fixed_schema() {
    let out = run_experiment(&spec(GAMMA_SWEEP), 1, 2).unwrap();
    let mut buf = Vec::new();
    write_csv(&out, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), BASE_COLUMNS.join(","));
    // 2 gammas x 3 algorithms x 3 seeds x (T + 1) rows
    assert_eq!(lines.count(), 2 * 3 * 3 * 7);
    for r in records(&out) {
        assert_eq!(r.study, "sweep_gamma");
        assert_eq!(r.sweep_param, "gamma");
        assert!(r.gap >= -1e-9 && r.cum_regret >= -1e-9 && r.kappa >= 1.0 - 1e-9);
        assert!(r.v_s1.is_none());
    }
}

#[test]
fn runs_are_reproducible() {
    let s = spec(NOISY);
    let csv = |seed, threads| {
        let mut buf = Vec::new();
        write_csv(&run_experiment(&s, seed, threads).unwrap(), &mut buf).unwrap();
        buf
    };
    let a = csv(7, 1);
    assert_eq!(a, csv(7, 3));
    assert_ne!(a, csv(8, 1));
}

#[test]
fn empty_algorithm_list_is_vacuous() {
    let mut s = spec(GAMMA_SWEEP);
    s.algorithms.clear();
    let out = run_experiment(&s, 0, 1).unwrap();
    assert!(out.cells.is_empty());
    assert!(summary(&out).cells.is_empty());
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&out, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn failing_runs_are_isolated() {
    let s = spec(NOISY);
    let clean = run_experiment(&s, 3, 2).unwrap();
    let poisoned = run_experiment_with(&s, 3, 2, &|p, algo, seed| {
        if algo == pmd_core::UpdateKind::Momentum && seed == 2 {
            Critic::Noisy { tau: f64::NAN }
        } else {
            p.critic()
        }
    })
    .unwrap();
    let failed: Vec<_> = poisoned
        .cells
        .iter()
        .flat_map(|c| c.runs.iter().map(move |r| (c.algo, r)))
        .filter(|(_, r)| r.outcome.is_err())
        .map(|(a, r)| (a, r.seed))
        .collect();
    assert_eq!(failed, vec![(pmd_core::UpdateKind::Momentum, 2)]);
    let keep = |r: &Record| !(r.algo == "momentum" && r.seed == 2);
    let a: Vec<Record> = records(&clean).into_iter().filter(keep).collect();
    assert_eq!(a, records(&poisoned));
    let sm = summary(&poisoned);
    let mom = sm.cells.iter().find(|c| c.algo == "momentum").unwrap();
    assert_eq!(mom.completed, 3);
    assert_eq!(mom.failed.len(), 1);
    assert_eq!(mom.failed[0].seed, 2);
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

fn same_stats(a: &CellSummary, b: &CellSummary) -> bool {
    a.algo == b.algo
        && a.completed == b.completed
        && close(a.sweep_value, b.sweep_value)
        && close(a.final_gap.mean, b.final_gap.mean)
        && close(a.final_gap.std, b.final_gap.std)
        && close(a.cum_regret.mean, b.cum_regret.mean)
        && close(a.cum_regret.std, b.cum_regret.std)
        && close(a.kappa0.mean, b.kappa0.mean)
        && close(a.kappa0.median, b.kappa0.median)
        && close(a.kappa_path.mean, b.kappa_path.mean)
        && close(a.entropy0, b.entropy0)
}

#[test]
fn summary_matches_csv() {
    let out = run_experiment(&spec(GAMMA_SWEEP), 5, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = write_outputs(&out, dir.path()).unwrap();
    assert_eq!(written.len(), 2);
    let from_csv = summarize(&read_records(&dir.path().join(RESULTS_FILE)));
    let saved: Summary = serde_json::from_str(&fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(saved.cells.len(), 6);
    assert_eq!((saved.iterations, saved.seeds, saved.global_seed), (6, 3, 5));
    for c in &saved.cells {
        let r = from_csv
            .iter()
            .find(|r| r.algo == c.algo && close(r.sweep_value, c.sweep_value))
            .unwrap();
        assert!(same_stats(c, r), "{c:?} vs {r:?}");
    }
}

#[test]
fn polytope_study_writes_points() {
    let s = spec(
        r#"
study = "polytope_dynamics"
algorithms = ["pmd", "lookahead"]
mdp_source = { example = "ii" }
T = 8
seeds = 1
polytope_resolution = 11
[hyperparameters]
k = 10
n = 5
"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&s, 0, 1).unwrap();
    assert_eq!(write_outputs(&out, dir.path()).unwrap().len(), 3);
    let recs = read_records(&dir.path().join(RESULTS_FILE));
    assert_eq!(recs.len(), 2 * 9);
    for r in &recs {
        let rows: Vec<Vec<f64>> = serde_json::from_str(r.policy_json.as_deref().unwrap()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(r.v_s1.unwrap().is_finite() && r.v_s2.unwrap().is_finite());
    }
}

#[test]
fn shipped_specs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("specs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let s = ExperimentSpec::from_path(&path).unwrap();
        s.validate().unwrap();
        assert_eq!(path.file_stem().unwrap().to_str().unwrap(), s.study.name());
        n += 1;
    }
    assert_eq!(n, 7);
}
