//! Experiment specification files (TOML or JSON).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pmd_core::generators::{ExampleId, InitMode, RandomMdpSpec};
use pmd_core::pmd::{LookaheadMode, RateMode};
use pmd_core::UpdateKind;
use serde::{Deserialize, Serialize};

use crate::error::{config, RunError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    SweepB,
    SweepGamma,
    SweepK,
    SweepActions,
    PolytopeDynamics,
    InexactControlled,
    InexactNatural,
}

impl Study {
    pub const ALL: [Study; 7] = [
        Study::SweepB,
        Study::SweepGamma,
        Study::SweepK,
        Study::SweepActions,
        Study::PolytopeDynamics,
        Study::InexactControlled,
        Study::InexactNatural,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::SweepB => "sweep_b",
            Study::SweepGamma => "sweep_gamma",
            Study::SweepK => "sweep_k",
            Study::SweepActions => "sweep_actions",
            Study::PolytopeDynamics => "polytope_dynamics",
            Study::InexactControlled => "inexact_controlled",
            Study::InexactNatural => "inexact_natural",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Study::SweepB => "random MDPs, branching factor b",
            Study::SweepGamma => "random MDPs, discount factor",
            Study::SweepK => "random MDPs, inner-loop steps k",
            Study::SweepActions => "random MDPs, number of actions",
            Study::PolytopeDynamics => "two-state examples, trajectories in the value polytope",
            Study::InexactControlled => "two-state examples, Gaussian critic noise tau",
            Study::InexactNatural => "two-state examples, Monte-Carlo critic with m rollouts",
        }
    }

    pub fn default_sweep(self) -> Sweep {
        let (param, values): (SweepParam, &[f64]) = match self {
            Study::SweepB => (SweepParam::Branching, &[5.0, 10.0, 20.0, 30.0, 40.0]),
            Study::SweepGamma => (SweepParam::Gamma, &[0.98, 0.95, 0.9, 0.85]),
            Study::SweepK => (SweepParam::K, &[1.0, 5.0, 10.0, 20.0, 30.0]),
            Study::SweepActions => (SweepParam::NumActions, &[2.0, 5.0, 10.0, 15.0]),
            Study::PolytopeDynamics => (SweepParam::None, &[]),
            Study::InexactControlled => (SweepParam::Tau, &[0.1, 0.5, 1.0]),
            Study::InexactNatural => (SweepParam::M, &[1.0, 5.0, 10.0, 50.0]),
        };
        Sweep {
            param,
            values: values.to_vec(),
        }
    }

    pub fn default_beta(self) -> f64 {
        match self {
            Study::SweepB | Study::SweepGamma | Study::SweepK | Study::SweepActions => 0.5,
            _ => 0.1,
        }
    }

    pub fn is_polytope(self) -> bool {
        self == Study::PolytopeDynamics
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, RunError> {
        Study::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| config(format!("unknown study '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    None,
    K,
    N,
    Beta,
    Epsilon0,
    Tau,
    M,
    #[serde(rename = "b", alias = "branching")]
    Branching,
    Gamma,
    NumActions,
    NumStates,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::None => "none",
            SweepParam::K => "k",
            SweepParam::N => "n",
            SweepParam::Beta => "beta",
            SweepParam::Epsilon0 => "epsilon0",
            SweepParam::Tau => "tau",
            SweepParam::M => "m",
            SweepParam::Branching => "b",
            SweepParam::Gamma => "gamma",
            SweepParam::NumActions => "num_actions",
            SweepParam::NumStates => "num_states",
        }
    }

    fn is_integer(self) -> bool {
        matches!(
            self,
            SweepParam::K | SweepParam::N | SweepParam::M | SweepParam::Branching | SweepParam::NumActions | SweepParam::NumStates
        )
    }

    fn needs_random_source(self) -> bool {
        matches!(self, SweepParam::Branching | SweepParam::NumActions | SweepParam::NumStates)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    #[serde(default)]
    pub values: Vec<f64>,
}

/// Random MDP family; the seed is drawn per run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMdpTemplate {
    pub num_states: usize,
    pub num_actions: usize,
    pub branching: usize,
    pub gamma: f64,
    #[serde(default = "one")]
    pub r_max: f64,
}

fn one() -> f64 {
    1.0
}

impl RandomMdpTemplate {
    pub fn with_seed(&self, seed: u64) -> RandomMdpSpec {
        RandomMdpSpec {
            num_states: self.num_states,
            num_actions: self.num_actions,
            branching: self.branching,
            gamma: self.gamma,
            r_max: self.r_max,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MdpSource {
    Random(RandomMdpTemplate),
    Example(ExampleId),
}

/// Whether PMD-family updates run on tabular policies or softmax logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    #[default]
    Approx,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparameters {
    pub k: usize,
    pub n: usize,
    /// Falls back to the study default when absent.
    pub beta: Option<f64>,
    pub epsilon0: f64,
    pub tau: f64,
    pub m: usize,
    pub init_mode: InitMode,
    pub mode: StepMode,
    pub lookahead: LookaheadMode,
    /// Tolerance decay; each algorithm's default when absent.
    pub rate: Option<RateMode>,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            k: 50,
            n: 0,
            beta: None,
            epsilon0: 1e-4,
            tau: 0.0,
            m: 10,
            init_mode: InitMode::Center,
            mode: StepMode::Approx,
            lookahead: LookaheadMode::Reevaluate,
            rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub study: Study,
    #[serde(default)]
    pub algorithms: Vec<UpdateKind>,
    pub mdp_source: MdpSource,
    #[serde(alias = "T")]
    pub iterations: usize,
    pub seeds: usize,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    /// Overrides the study's default sweep.
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Grid points per simplex edge for the polytope sample.
    #[serde(default)]
    pub polytope_resolution: Option<usize>,
}

impl ExperimentSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, RunError> {
        let spec: ExperimentSpec = toml::from_str(s).map_err(|e| config(format!("spec TOML: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_str(s: &str) -> Result<Self, RunError> {
        let spec: ExperimentSpec = serde_json::from_str(s).map_err(|e| config(format!("spec JSON: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Dispatches on the extension; anything but `.json` is read as TOML.
    pub fn from_path(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn sweep(&self) -> Sweep {
        self.sweep.clone().unwrap_or_else(|| self.study.default_sweep())
    }

    /// Sweep values, or a single placeholder when the study does not sweep.
    pub fn sweep_values(&self) -> Vec<f64> {
        let sweep = self.sweep();
        if sweep.param == SweepParam::None {
            vec![0.0]
        } else {
            sweep.values
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.iterations == 0 {
            return Err(config("iterations must be >= 1"));
        }
        let sweep = self.sweep();
        if sweep.param != SweepParam::None && sweep.values.is_empty() {
            return Err(config(format!("sweep over {} has no values", sweep.param.name())));
        }
        if sweep.param.needs_random_source() && matches!(self.mdp_source, MdpSource::Example(_)) {
            return Err(config(format!("sweep over {} needs a random MDP source", sweep.param.name())));
        }
        for v in self.sweep_values() {
            if sweep.param.is_integer() && (v.fract() != 0.0 || v < 0.0) {
                return Err(config(format!("{} must be a nonnegative integer, got {v}", sweep.param.name())));
            }
            self.resolve(v)?.check()?;
        }
        if self.study.is_polytope() {
            let ns = match self.mdp_source {
                MdpSource::Random(t) => t.num_states,
                MdpSource::Example(_) => 2,
            };
            if ns != 2 {
                return Err(config("polytope studies need a two-state MDP"));
            }
            if self.polytope_resolution.is_some_and(|r| r < 2) {
                return Err(config("polytope_resolution must be >= 2"));
            }
        }
        Ok(())
    }

    /// Parameters of one sweep cell.
    pub fn resolve(&self, value: f64) -> Result<CellParams, RunError> {
        let mut hp = self.hyperparameters;
        let mut source = self.mdp_source;
        let mut gamma_override = None;
        let as_count = |v: f64| v as usize;
        match self.sweep().param {
            SweepParam::None => {}
            SweepParam::K => hp.k = as_count(value),
            SweepParam::N => hp.n = as_count(value),
            SweepParam::Beta => hp.beta = Some(value),
            SweepParam::Epsilon0 => hp.epsilon0 = value,
            SweepParam::Tau => hp.tau = value,
            SweepParam::M => hp.m = as_count(value),
            SweepParam::Gamma => match &mut source {
                MdpSource::Random(t) => t.gamma = value,
                MdpSource::Example(_) => gamma_override = Some(value),
            },
            SweepParam::Branching | SweepParam::NumActions | SweepParam::NumStates => {
                let MdpSource::Random(t) = &mut source else {
                    return Err(config("sweep needs a random MDP source"));
                };
                match self.sweep().param {
                    SweepParam::Branching => t.branching = as_count(value),
                    SweepParam::NumActions => t.num_actions = as_count(value),
                    _ => t.num_states = as_count(value),
                }
            }
        }
        Ok(CellParams {
            beta: hp.beta.unwrap_or(self.study.default_beta()),
            hp,
            source,
            gamma_override,
            critic_kind: match self.study {
                Study::InexactControlled => CriticKind::Noisy,
                Study::InexactNatural => CriticKind::MonteCarlo,
                _ => CriticKind::Exact,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticKind {
    Exact,
    Noisy,
    MonteCarlo,
}

/// Fully resolved parameters of one sweep value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellParams {
    pub hp: Hyperparameters,
    pub beta: f64,
    pub source: MdpSource,
    pub gamma_override: Option<f64>,
    pub critic_kind: CriticKind,
}

impl CellParams {
    pub fn critic(&self) -> pmd_core::Critic {
        match self.critic_kind {
            CriticKind::Exact => pmd_core::Critic::Exact,
            CriticKind::Noisy => pmd_core::Critic::Noisy { tau: self.hp.tau },
            CriticKind::MonteCarlo => pmd_core::Critic::MonteCarlo { m: self.hp.m },
        }
    }

    fn check(&self) -> Result<(), RunError> {
        let hp = &self.hp;
        pmd_core::InnerLoopConfig::new(hp.k, hp.n, self.beta).map_err(|e| config(e.to_string()))?;
        pmd_core::StepSchedule::new(hp.epsilon0, pmd_core::RateMode::GammaRate).map_err(|e| config(e.to_string()))?;
        if !(hp.tau >= 0.0 && hp.tau.is_finite()) {
            return Err(config(format!("tau must be finite and >= 0, got {}", hp.tau)));
        }
        if self.critic_kind == CriticKind::MonteCarlo && hp.m == 0 {
            return Err(config("m must be >= 1"));
        }
        if let Some(g) = self.gamma_override {
            if !(0.0..1.0).contains(&g) {
                return Err(config(format!("discount {g} outside [0, 1)")));
            }
        }
        if let MdpSource::Random(t) = self.source {
            t.with_seed(0).validate().map_err(|e| config(e.to_string()))?;
        }
        Ok(())
    }
}
