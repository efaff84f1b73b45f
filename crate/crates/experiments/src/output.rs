//! Result files: per-iteration CSV, JSON summary and polytope samples.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{runtime, RunError};
use crate::runner::RunOutput;

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const POLYTOPE_FILE: &str = "polytope.csv";

pub const BASE_COLUMNS: [&str; 11] = [
    "study",
    "algo",
    "seed",
    "sweep_param",
    "sweep_value",
    "t",
    "v_rho",
    "gap",
    "cum_regret",
    "kappa",
    "entropy",
];
pub const POLYTOPE_COLUMNS: [&str; 3] = ["v_s1", "v_s2", "policy_json"];

/// One CSV row as read back from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub study: String,
    pub algo: String,
    pub seed: usize,
    pub sweep_param: String,
    pub sweep_value: f64,
    pub t: usize,
    pub v_rho: f64,
    pub gap: f64,
    pub cum_regret: f64,
    pub kappa: f64,
    pub entropy: f64,
    #[serde(default)]
    pub v_s1: Option<f64>,
    #[serde(default)]
    pub v_s2: Option<f64>,
    #[serde(default)]
    pub policy_json: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMedian {
    pub mean: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub seed: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub algo: String,
    pub sweep_value: f64,
    pub completed: usize,
    #[serde(default)]
    pub failed: Vec<FailedRun>,
    pub final_gap: MeanStd,
    pub cum_regret: MeanStd,
    /// κ of the initial policy.
    pub kappa0: MeanMedian,
    /// Per-seed mean of κ along the trajectory.
    pub kappa_path: MeanMedian,
    pub entropy0: f64,
    #[serde(default)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub study: String,
    pub sweep_param: String,
    pub global_seed: u64,
    pub iterations: usize,
    pub seeds: usize,
    pub cells: Vec<CellSummary>,
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

fn median(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Per-seed trajectories grouped into cells, in order of first appearance.
fn group(records: &[Record]) -> Vec<((String, f64), Vec<Vec<&Record>>)> {
    let mut cells: Vec<((String, f64), Vec<(usize, Vec<&Record>)>)> = Vec::new();
    for r in records {
        let key = (r.algo.clone(), r.sweep_value);
        let idx = match cells.iter().position(|(k, _)| k.0 == key.0 && k.1.to_bits() == key.1.to_bits()) {
            Some(i) => i,
            None => {
                cells.push((key, Vec::new()));
                cells.len() - 1
            }
        };
        let seeds = &mut cells[idx].1;
        match seeds.iter_mut().find(|(s, _)| *s == r.seed) {
            Some((_, rows)) => rows.push(r),
            None => seeds.push((r.seed, vec![r])),
        }
    }
    cells
        .into_iter()
        .map(|(k, seeds)| (k, seeds.into_iter().map(|(_, rows)| rows).collect()))
        .collect()
}

fn last<'a>(rows: &[&'a Record]) -> &'a Record {
    rows.iter().max_by_key(|r| r.t).expect("non-empty trajectory")
}

fn first<'a>(rows: &[&'a Record]) -> &'a Record {
    rows.iter().min_by_key(|r| r.t).expect("non-empty trajectory")
}

fn cell_summary(algo: String, sweep_value: f64, seeds: &[Vec<&Record>]) -> CellSummary {
    let finals: Vec<f64> = seeds.iter().map(|s| last(s).gap).collect();
    let cums: Vec<f64> = seeds.iter().map(|s| last(s).cum_regret).collect();
    let k0: Vec<f64> = seeds.iter().map(|s| first(s).kappa).collect();
    let kp: Vec<f64> = seeds
        .iter()
        .map(|s| s.iter().map(|r| r.kappa).sum::<f64>() / s.len() as f64)
        .collect();
    let h0: Vec<f64> = seeds.iter().map(|s| first(s).entropy).collect();
    CellSummary {
        algo,
        sweep_value,
        completed: seeds.len(),
        failed: Vec::new(),
        final_gap: MeanStd {
            mean: mean(&finals),
            std: std(&finals),
        },
        cum_regret: MeanStd {
            mean: mean(&cums),
            std: std(&cums),
        },
        kappa0: MeanMedian {
            mean: mean(&k0),
            median: median(&k0),
        },
        kappa_path: MeanMedian {
            mean: mean(&kp),
            median: median(&kp),
        },
        entropy0: mean(&h0),
        wall_time_s: 0.0,
    }
}

/// Statistics of every cell that has at least one completed run.
pub fn summarize(records: &[Record]) -> Vec<CellSummary> {
    group(records)
        .into_iter()
        .map(|((algo, v), seeds)| cell_summary(algo, v, &seeds))
        .collect()
}

pub fn records(out: &RunOutput) -> Vec<Record> {
    let study = out.spec.study.name().to_string();
    let param = out.spec.sweep().param.name().to_string();
    let mut recs = Vec::new();
    for cell in &out.cells {
        for run in &cell.runs {
            let Ok(rows) = &run.outcome else { continue };
            for row in rows {
                recs.push(Record {
                    study: study.clone(),
                    algo: cell.algo.name().to_string(),
                    seed: run.seed,
                    sweep_param: param.clone(),
                    sweep_value: cell.sweep_value,
                    t: row.t,
                    v_rho: row.v_rho,
                    gap: row.gap,
                    cum_regret: row.cum_regret,
                    kappa: row.kappa,
                    entropy: row.entropy,
                    v_s1: row.v.map(|v| v[0]),
                    v_s2: row.v.map(|v| v[1]),
                    policy_json: row.policy.as_ref().map(|p| serde_json::to_string(p).expect("policy serializes")),
                })
            }
        }
    }
    recs
}

pub fn summary(out: &RunOutput) -> Summary {
    let recs = records(out);
    let stats = summarize(&recs);
    let cells = out
        .cells
        .iter()
        .map(|cell| {
            let name = cell.algo.name();
            let mut s = stats
                .iter()
                .find(|s| s.algo == name && s.sweep_value.to_bits() == cell.sweep_value.to_bits())
                .cloned()
                .unwrap_or_else(|| cell_summary(name.to_string(), cell.sweep_value, &[]));
            s.failed = cell
                .runs
                .iter()
                .filter_map(|r| r.outcome.as_ref().err().map(|e| FailedRun { seed: r.seed, error: e.clone() }))
                .collect();
            s.wall_time_s = cell.wall_time_s;
            s
        })
        .collect();
    Summary {
        study: out.spec.study.name().to_string(),
        sweep_param: out.spec.sweep().param.name().to_string(),
        global_seed: out.global_seed,
        iterations: out.spec.iterations,
        seeds: out.spec.seeds,
        cells,
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

pub fn write_csv<W: std::io::Write>(out: &RunOutput, w: W) -> Result<(), RunError> {
    let polytope = out.spec.study.is_polytope();
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    if polytope {
        header.extend(POLYTOPE_COLUMNS);
    }
    wtr.write_record(&header)?;
    for r in records(out) {
        let mut fields = vec![
            r.study,
            r.algo,
            r.seed.to_string(),
            r.sweep_param,
            num(r.sweep_value),
            r.t.to_string(),
            num(r.v_rho),
            num(r.gap),
            num(r.cum_regret),
            num(r.kappa),
            num(r.entropy),
        ];
        if polytope {
            fields.push(r.v_s1.map(num).unwrap_or_default());
            fields.push(r.v_s2.map(num).unwrap_or_default());
            fields.push(r.policy_json.unwrap_or_default());
        }
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_polytope<W: std::io::Write>(out: &RunOutput, w: W) -> Result<(), RunError> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wtr.write_record(["sweep_value", "kind", "v_s1", "v_s2"])?;
    for (v, sample) in &out.polytopes {
        for (kind, pts) in [("point", &sample.points), ("corner", &sample.corners)] {
            for p in pts {
                wtr.write_record([num(*v), kind.to_string(), num(p[0]), num(p[1])])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Writes all result files under `dir` and returns their paths.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join(RESULTS_FILE);
    write_csv(out, fs::File::create(&path)?)?;
    written.push(path);
    let path = dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summary(out)).map_err(|e| runtime(format!("summary JSON: {e}")))?;
    fs::write(&path, json + "\n")?;
    written.push(path);
    if out.spec.study.is_polytope() {
        let path = dir.join(POLYTOPE_FILE);
        write_polytope(out, fs::File::create(&path)?)?;
        written.push(path);
    }
    Ok(written)
}
