//! Random (Garnet-style) MDPs, the four hand-specified two-state examples
//! and policy initializers.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::ParametricPolicy;
use crate::error::{invalid, Error, Result};
use crate::mdp::{solve_optimal, Mdp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpSpec {
    pub num_states: usize,
    pub num_actions: usize,
    /// Number of reachable next states per state-action pair.
    pub branching: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub seed: u64,
}

impl RandomMdpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(invalid("random MDP needs at least one state and one action"));
        }
        if self.branching == 0 || self.branching > self.num_states {
            return Err(invalid(format!(
                "branching factor {} must lie in [1, {}]",
                self.branching, self.num_states
            )));
        }
        if !(self.r_max >= 0.0 && self.r_max.is_finite()) {
            return Err(invalid(format!("r_max must be finite and >= 0, got {}", self.r_max)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid(format!("discount {} outside [0, 1)", self.gamma)));
        }
        Ok(())
    }
}

/// Draws a random MDP: for every `(s, a)`, `b` distinct next states receive
/// the gaps between `b − 1` sorted uniform cut points; rewards are per state,
/// uniform on `[0, r_max]`, shared by all actions. `ρ` is uniform.
pub fn generate_random_mdp(spec: &RandomMdpSpec) -> Result<Mdp> {
    spec.validate()?;
    let (ns, na, b) = (spec.num_states, spec.num_actions, spec.branching);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut p = DMatrix::zeros(ns * na, ns);
    let mut cuts = Vec::with_capacity(b + 1);
    for row in 0..ns * na {
        let targets = sample(&mut rng, ns, b);
        cuts.clear();
        cuts.push(0.0);
        cuts.extend((1..b).map(|_| rng.random::<f64>()));
        cuts[1..].sort_by(f64::total_cmp);
        cuts.push(1.0);
        for (i, sp) in targets.iter().enumerate() {
            p[(row, sp)] = cuts[i + 1] - cuts[i];
        }
    }
    let r_state: Vec<f64> = (0..ns).map(|_| rng.random::<f64>() * spec.r_max).collect();
    let r = DMatrix::from_fn(ns, na, |s, _| r_state[s]);
    Mdp::new(ns, na, p, r, spec.gamma, DVector::from_element(ns, 1.0 / ns as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleId {
    I,
    Ii,
    Iii,
    Iv,
}

impl ExampleId {
    pub const ALL: [ExampleId; 4] = [ExampleId::I, ExampleId::Ii, ExampleId::Iii, ExampleId::Iv];

    pub fn name(self) -> &'static str {
        match self {
            ExampleId::I => "i",
            ExampleId::Ii => "ii",
            ExampleId::Iii => "iii",
            ExampleId::Iv => "iv",
        }
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExampleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExampleId::ALL
            .into_iter()
            .find(|e| e.name() == s.to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("unknown example MDP `{s}` (expected i, ii, iii or iv)")))
    }
}

struct RawExample {
    num_actions: usize,
    gamma: f64,
    r: &'static [f64],
    p: &'static [[f64; 2]],
}

fn raw(id: ExampleId) -> RawExample {
    match id {
        ExampleId::I => RawExample {
            num_actions: 2,
            gamma: 0.9,
            r: &[-0.45, -0.1, 0.5, 0.5],
            p: &[[-0.45, 0.3], [0.99, 0.01], [0.2, 0.8], [0.99, 0.01]],
        },
        ExampleId::Ii => RawExample {
            num_actions: 2,
            gamma: 0.9,
            r: &[0.06, 0.38, -0.13, 0.64],
            p: &[[0.01, 0.99], [0.92, 0.08], [0.08, 0.92], [0.70, 0.30]],
        },
        ExampleId::Iii => RawExample {
            num_actions: 2,
            gamma: 0.9,
            r: &[0.88, -0.02, -0.98, 0.42],
            p: &[[0.96, 0.04], [0.19, 0.81], [0.43, 0.57], [0.72, 0.28]],
        },
        ExampleId::Iv => RawExample {
            num_actions: 3,
            gamma: 0.8,
            r: &[-0.1, -1., 0.1, 0.4, 1.5, 0.1],
            p: &[[0.9, 0.1], [0.2, 0.8], [0.7, 0.3], [0.05, 0.95], [0.25, 0.75], [0.3, 0.7]],
        },
    }
}

/// Builds an example MDP, returning messages for every transition row that
/// needed repair (negative entries clamped to zero, row renormalized).
pub fn example_mdp_with_log(id: ExampleId) -> Result<(Mdp, Vec<String>)> {
    let ex = raw(id);
    let na = ex.num_actions;
    let ns = ex.p.len() / na;
    let mut log = Vec::new();
    let mut p = DMatrix::zeros(ns * na, ns);
    for (i, row) in ex.p.iter().enumerate() {
        let mut fixed: Vec<f64> = row.iter().map(|x| x.max(0.0)).collect();
        let sum: f64 = fixed.iter().sum();
        if row.iter().any(|x| *x < 0.0) || (sum - 1.0).abs() > 1e-12 {
            fixed.iter_mut().for_each(|x| *x /= sum);
            log.push(format!(
                "example {id}: transition row {i} (s={}, a={}) {row:?} repaired to {fixed:?}",
                i / na,
                i % na
            ));
        }
        for (k, v) in fixed.into_iter().enumerate() {
            p[(i, k)] = v;
        }
    }
    let r = DMatrix::from_fn(ns, na, |s, a| ex.r[s * na + a]);
    let mdp = Mdp::new(ns, na, p, r, ex.gamma, DVector::from_element(ns, 1.0 / ns as f64))?;
    Ok((mdp, log))
}

static REPAIR_WARNED: [AtomicBool; 4] = [const { AtomicBool::new(false) }; 4];

/// Like [`example_mdp_with_log`]; repairs are logged once per process.
pub fn example_mdp(id: ExampleId) -> Result<Mdp> {
    let (mdp, log) = example_mdp_with_log(id)?;
    let idx = ExampleId::ALL.iter().position(|e| *e == id).unwrap_or(0);
    if !REPAIR_WARNED[idx].swap(true, Ordering::Relaxed) {
        for line in log {
            log::warn!("{line}");
        }
    }
    Ok(mdp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Center,
    Boundary,
    RandomUniform,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(InitMode::Center),
            "boundary" => Ok(InitMode::Boundary),
            "random_uniform" => Ok(InitMode::RandomUniform),
            _ => Err(invalid(format!("unknown init mode `{s}`"))),
        }
    }
}

/// Mass left off the adversarial action by the boundary initializer.
pub const BOUNDARY_DELTA: f64 = 1e-3;

/// Deterministic policy minimizing every `V_s` (hence `V_ρ`), found by
/// policy iteration on the negated rewards.
pub fn worst_deterministic_actions(mdp: &Mdp) -> Result<Vec<usize>> {
    let neg = Mdp::new(
        mdp.num_states(),
        mdp.num_actions(),
        mdp.transition().clone(),
        -mdp.reward(),
        mdp.gamma(),
        mdp.rho().clone(),
    )?;
    let worst = solve_optimal(&neg)?.policy;
    Ok((0..mdp.num_states())
        .map(|s| {
            let row = worst.row(s);
            (0..row.len()).fold(0, |best, a| if row[a] > row[best] { a } else { best })
        })
        .collect())
}

pub fn init_policy<R: Rng + ?Sized>(mode: InitMode, mdp: &Mdp, rng: &mut R) -> Result<ParametricPolicy> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    match mode {
        InitMode::Center => Ok(ParametricPolicy::zeros(ns, na)),
        InitMode::RandomUniform => ParametricPolicy::new(DMatrix::from_fn(ns, na, |_, _| rng.random::<f64>())),
        InitMode::Boundary => {
            if na == 1 {
                return Ok(ParametricPolicy::zeros(ns, na));
            }
            let worst = worst_deterministic_actions(mdp)?;
            let hi = (1.0 - BOUNDARY_DELTA).ln();
            let lo = (BOUNDARY_DELTA / (na - 1) as f64).ln();
            ParametricPolicy::new(DMatrix::from_fn(ns, na, |s, a| if a == worst[s] { hi } else { lo }))
        }
    }
}
