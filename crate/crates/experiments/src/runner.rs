//! Executes an experiment: sweep values × algorithms form cells, each cell
//! runs its seeds sequentially, cells run on a worker pool.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use pmd_core::approx::{step_approx, ApproxConfig, ApproxState, InnerLoopConfig, ParametricPolicy};
use pmd_core::diagnostics::{conditioning, sample_polytope, default_resolution, PolytopeSample};
use pmd_core::generators::{example_mdp, generate_random_mdp, init_policy};
use pmd_core::pmd::{step_exact, ExactConfig, IterState, StepSchedule};
use pmd_core::{evaluate, solve_optimal, Critic, Mdp, Policy, UpdateKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{runtime, RunError};
use crate::spec::{CellParams, ExperimentSpec, MdpSource, StepMode};

const STREAM_MDP: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_CRITIC: u64 = 3;

/// Mixes a global seed with stream identifiers (splitmix64 finalizer).
pub fn derive_seed(global: u64, parts: &[u64]) -> u64 {
    let mut h = global ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

/// One recorded iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub t: usize,
    pub v_rho: f64,
    pub gap: f64,
    pub cum_regret: f64,
    pub kappa: f64,
    pub entropy: f64,
    /// `(V(s1), V(s2))` and the policy rows, two-state MDPs only.
    pub v: Option<[f64; 2]>,
    pub policy: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: usize,
    pub outcome: Result<Vec<Row>, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub algo: UpdateKind,
    pub sweep_value: f64,
    pub runs: Vec<SeedRun>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub spec: ExperimentSpec,
    pub global_seed: u64,
    pub cells: Vec<CellResult>,
    /// Per sweep value, the polytope of the seed-0 MDP (polytope studies).
    pub polytopes: Vec<(f64, PolytopeSample)>,
}

pub fn build_mdp(params: &CellParams, global_seed: u64, seed: usize) -> pmd_core::Result<Mdp> {
    let mdp = match params.source {
        MdpSource::Random(t) => generate_random_mdp(&t.with_seed(derive_seed(global_seed, &[STREAM_MDP, seed as u64])))?,
        MdpSource::Example(id) => example_mdp(id)?,
    };
    match params.gamma_override {
        Some(g) => mdp.with_gamma(g),
        None => Ok(mdp),
    }
}

/// Policies `π^0 … π^T` of one algorithm.
pub fn trajectory(
    algo: UpdateKind,
    params: &CellParams,
    mdp: &Mdp,
    init: &ParametricPolicy,
    critic: &Critic,
    iterations: usize,
    rng: &mut ChaCha8Rng,
) -> pmd_core::Result<Vec<Policy>> {
    let hp = &params.hp;
    let schedule = StepSchedule::new(hp.epsilon0, hp.rate.unwrap_or(algo.default_rate()))?;
    let mut out = Vec::with_capacity(iterations + 1);
    let exact = hp.mode == StepMode::Exact || matches!(algo, UpdateKind::Pi | UpdateKind::Vi);
    if exact {
        let cfg = ExactConfig::new(schedule).with_lookahead(hp.lookahead);
        let mut state = IterState::new(init.policy());
        out.push(state.pi.clone());
        for _ in 0..iterations {
            state = step_exact(algo, &state, mdp, critic, &cfg, rng)?;
            out.push(state.pi.clone());
        }
    } else {
        let cfg = ApproxConfig {
            schedule,
            lookahead: hp.lookahead,
            inner: InnerLoopConfig::new(hp.k, hp.n, params.beta)?,
        };
        let mut state = ApproxState::new(init.clone());
        out.push(state.policy());
        for _ in 0..iterations {
            state = step_approx(algo, &state, mdp, critic, &cfg, rng)?;
            out.push(state.policy());
        }
    }
    Ok(out)
}

/// Metrics along a trajectory; cumulative regret includes `t = 0`.
pub fn record(mdp: &Mdp, policies: &[Policy], v_star: f64, with_points: bool) -> pmd_core::Result<Vec<Row>> {
    let mut cum = 0.0;
    policies
        .iter()
        .enumerate()
        .map(|(t, pi)| {
            let vals = evaluate(mdp, pi)?;
            let v_rho = vals.v_rho(mdp.rho());
            let gap = v_star - v_rho;
            cum += gap;
            let cond = conditioning(mdp, pi)?;
            Ok(Row {
                t,
                v_rho,
                gap,
                cum_regret: cum,
                kappa: cond.kappa,
                entropy: cond.entropy,
                v: with_points.then(|| [vals.v[0], vals.v[1]]),
                policy: with_points.then(|| pi.rows()),
            })
        })
        .collect()
}

fn run_seed(
    spec: &ExperimentSpec,
    params: &CellParams,
    algo: UpdateKind,
    seed: usize,
    global_seed: u64,
    critic: &Critic,
) -> Result<Vec<Row>, String> {
    let go = || -> pmd_core::Result<Vec<Row>> {
        let mdp = build_mdp(params, global_seed, seed)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(global_seed, &[STREAM_INIT, seed as u64]));
        let init = init_policy(params.hp.init_mode, &mdp, &mut init_rng)?;
        // common random numbers: every algorithm and sweep value of a seed
        // sees the same critic noise stream
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(global_seed, &[STREAM_CRITIC, seed as u64]));
        let policies = trajectory(algo, params, &mdp, &init, critic, spec.iterations, &mut rng)?;
        let v_star = solve_optimal(&mdp)?.values.v_rho(mdp.rho());
        record(&mdp, &policies, v_star, spec.study.is_polytope())
    };
    match catch_unwind(AssertUnwindSafe(go)) {
        Ok(Ok(rows)) => Ok(rows),
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => Err(match panic.downcast_ref::<&str>() {
            Some(s) => format!("panic: {s}"),
            None => match panic.downcast_ref::<String>() {
                Some(s) => format!("panic: {s}"),
                None => "panic".to_string(),
            },
        }),
    }
}

/// Picks the critic of one run; the default uses the study's critic.
pub type CriticFn<'a> = dyn Fn(&CellParams, UpdateKind, usize) -> Critic + Sync + 'a;

pub fn run_experiment(spec: &ExperimentSpec, global_seed: u64, threads: usize) -> Result<RunOutput, RunError> {
    run_experiment_with(spec, global_seed, threads, &|p: &CellParams, _, _| p.critic())
}

pub fn run_experiment_with(
    spec: &ExperimentSpec,
    global_seed: u64,
    threads: usize,
    critic_for: &CriticFn<'_>,
) -> Result<RunOutput, RunError> {
    spec.validate()?;
    let values = spec.sweep_values();
    let params: Vec<CellParams> = values.iter().map(|v| spec.resolve(*v)).collect::<Result<_, _>>()?;
    let cells: Vec<(usize, UpdateKind)> = (0..values.len())
        .flat_map(|i| spec.algorithms.iter().map(move |a| (i, *a)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| runtime(format!("thread pool: {e}")))?;
    let results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(i, algo)| {
                let start = Instant::now();
                let runs = (0..spec.seeds)
                    .map(|seed| {
                        let critic = critic_for(&params[i], algo, seed);
                        let outcome = run_seed(spec, &params[i], algo, seed, global_seed, &critic);
                        if let Err(e) = &outcome {
                            log::warn!("{algo} at {} = {} seed {seed} failed: {e}", spec.sweep().param.name(), values[i]);
                        }
                        SeedRun { seed, outcome }
                    })
                    .collect();
                CellResult {
                    algo,
                    sweep_value: values[i],
                    runs,
                    wall_time_s: start.elapsed().as_secs_f64(),
                }
            })
            .collect()
    });
    let mut polytopes = Vec::new();
    if spec.study.is_polytope() {
        for (v, p) in values.iter().zip(&params) {
            let mdp = build_mdp(p, global_seed, 0).map_err(|e| runtime(e.to_string()))?;
            let res = spec.polytope_resolution.unwrap_or(default_resolution(mdp.num_actions()));
            polytopes.push((*v, sample_polytope(&mdp, res).map_err(|e| runtime(e.to_string()))?));
        }
    }
    Ok(RunOutput {
        spec: spec.clone(),
        global_seed,
        cells: results,
        polytopes,
    })
}
