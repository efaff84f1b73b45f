//! Command line interface. `main` returns the exit code of [`run_cli`].

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use pmd_core::diagnostics::{conditioning, default_resolution, sample_polytope};
use pmd_core::generators::{example_mdp, ExampleId};
use pmd_core::{evaluate, visitation, Mdp, Policy};
use serde_json::json;

use crate::error::{config, runtime, RunError};
use crate::output::write_outputs;
use crate::runner::run_experiment;
use crate::spec::{ExperimentSpec, Study};

pub const SEED_ENV: &str = "PMD_ACCEL_SEED";

#[derive(Debug, Parser)]
#[command(name = "pmd-accel", version, about = "Policy mirror descent experiments")]
pub struct Cli {
    /// Global seed; falls back to $PMD_ACCEL_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment spec (TOML or JSON).
    Run { spec: PathBuf },
    /// Print the available studies.
    ListStudies,
    /// Check an MDP JSON file.
    Validate { mdp: PathBuf },
    /// Sample the value polytope of a two-state example.
    Polytope {
        example: String,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Evaluate a policy (JSON array of rows) on an MDP.
    Evaluate { mdp: PathBuf, policy: PathBuf },
}

fn global_seed(flag: Option<u64>) -> Result<u64, RunError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| config(format!("{SEED_ENV}={v} is not an integer"))),
        Err(_) => Ok(0),
    }
}

fn read(path: &Path) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(|e| config(format!("cannot read {}: {e}", path.display())))
}

fn load_mdp(path: &Path) -> Result<Mdp, RunError> {
    Mdp::from_json_str(&read(path)?).map_err(|e| config(format!("{}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::ListStudies => {
            for st in Study::ALL {
                println!("{:<20}{}", st.name(), st.description());
            }
        }
        Command::Run { spec } => {
            let spec_file = spec;
            let spec = ExperimentSpec::from_path(&spec_file)?;
            let seed = global_seed(cli.seed)?;
            let dir = cli
                .out
                .or_else(|| spec.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("results").join(spec.study.name()));
            log::info!("running {} from {} with seed {seed}", spec.study, spec_file.display());
            let out = run_experiment(&spec, seed, cli.threads)?;
            let failed: usize = out.cells.iter().flat_map(|c| &c.runs).filter(|r| r.outcome.is_err()).count();
            if failed > 0 {
                log::warn!("{failed} run(s) failed; see summary.json");
            }
            for p in write_outputs(&out, &dir)? {
                println!("{}", p.display());
            }
        }
        Command::Validate { mdp } => {
            let m = load_mdp(&mdp)?;
            println!(
                "ok: {} states, {} actions, gamma {}",
                m.num_states(),
                m.num_actions(),
                m.gamma()
            );
        }
        Command::Polytope { example, resolution } => {
            let id: ExampleId = example.parse().map_err(|e: pmd_core::Error| config(e.to_string()))?;
            let mdp = example_mdp(id).map_err(|e| runtime(e.to_string()))?;
            let res = resolution.unwrap_or(default_resolution(mdp.num_actions()));
            if res < 2 {
                return Err(config("resolution must be >= 2"));
            }
            let sample = sample_polytope(&mdp, res).map_err(|e| runtime(e.to_string()))?;
            let mut text = String::from("kind,v_s1,v_s2\n");
            for (kind, pts) in [("point", &sample.points), ("corner", &sample.corners)] {
                for p in pts {
                    text.push_str(&format!("{kind},{},{}\n", p[0], p[1]));
                }
            }
            match cli.out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    let path = dir.join(format!("polytope_{}.csv", id.name()));
                    std::fs::write(&path, text)?;
                    println!("{}", path.display());
                }
                None => print!("{text}"),
            }
        }
        Command::Evaluate { mdp, policy } => {
            let m = load_mdp(&mdp)?;
            let rows: Vec<Vec<f64>> =
                serde_json::from_str(&read(&policy)?).map_err(|e| config(format!("policy JSON: {e}")))?;
            let pi = Policy::from_rows(&rows).map_err(|e| config(e.to_string()))?;
            if pi.num_states() != m.num_states() || pi.num_actions() != m.num_actions() {
                return Err(config("policy shape does not match the MDP"));
            }
            let err = |e: pmd_core::Error| runtime(e.to_string());
            let vals = evaluate(&m, &pi).map_err(err)?;
            let d = visitation(&m, &pi).map_err(err)?;
            let cond = conditioning(&m, &pi).map_err(err)?;
            let q: Vec<Vec<f64>> = (0..m.num_states()).map(|s| vals.q.row(s).iter().copied().collect()).collect();
            let report = json!({
                "v": vals.v.iter().collect::<Vec<_>>(),
                "q": q,
                "v_rho": vals.v_rho(m.rho()),
                "visitation": d.iter().collect::<Vec<_>>(),
                "kappa": cond.kappa,
                "spectral_radius": cond.spectral_radius,
                "entropy": cond.entropy,
            });
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
