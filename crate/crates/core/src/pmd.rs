//! Exact (closed-form, tabular) policy mirror descent and its functionally
//! accelerated variants, plus the PI / VI baselines.
//!
//! Every update is a per-state proximal step under negative entropy, so the
//! iterates are computed in closed form as multiplicative-weights updates.
//! Step sizes are adapted per state so that the proximal term shrinks
//! geometrically: `η_s = D(greedy(G_s), π_s) / ε_t` with `ε_t = γ^{c(t+1)} ε₀`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critics::Critic;
use crate::error::{invalid, Error, Result};
use crate::mdp::{evaluate, greedy, greedy_row, Mdp, Policy};
use crate::mirror::{neg_entropy_bregman, prox_policy, NegEntropy};

/// Lower bound on adaptive step sizes; a row that is already greedy has a
/// zero divergence to its greedy policy.
pub const ETA_FLOOR: f64 = 1e-12;
/// Upper clamp on the momentum coefficient `η^{t−1}/η^t`.
pub const MOMENTUM_RATIO_MAX: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Pi,
    Vi,
    Pmd,
    Lookahead,
    Extragradient,
    Correction,
    LazyCorrection,
    Momentum,
}

impl UpdateKind {
    pub const ALL: [UpdateKind; 8] = [
        UpdateKind::Pi,
        UpdateKind::Vi,
        UpdateKind::Pmd,
        UpdateKind::Lookahead,
        UpdateKind::Extragradient,
        UpdateKind::Correction,
        UpdateKind::LazyCorrection,
        UpdateKind::Momentum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UpdateKind::Pi => "pi",
            UpdateKind::Vi => "vi",
            UpdateKind::Pmd => "pmd",
            UpdateKind::Lookahead => "lookahead",
            UpdateKind::Extragradient => "extragradient",
            UpdateKind::Correction => "correction",
            UpdateKind::LazyCorrection => "lazy_correction",
            UpdateKind::Momentum => "momentum",
        }
    }

    /// Variants that keep an intermediary policy separately parametrized.
    pub fn has_intermediary(self) -> bool {
        matches!(
            self,
            UpdateKind::Extragradient | UpdateKind::Correction | UpdateKind::LazyCorrection
        )
    }

    /// Variants that recycle the previous critic output.
    pub fn is_lazy(self) -> bool {
        matches!(self, UpdateKind::LazyCorrection | UpdateKind::Momentum)
    }

    /// Default step-size exponent: `γ^{t+1}` for plain PMD, `γ^{2(t+1)}` for
    /// the accelerated variants.
    pub fn default_rate(self) -> RateMode {
        match self {
            UpdateKind::Pmd | UpdateKind::Pi | UpdateKind::Vi => RateMode::GammaRate,
            _ => RateMode::GammaSquaredRate,
        }
    }
}

impl fmt::Display for UpdateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UpdateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UpdateKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown update kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    /// `ε_t = γ^{t+1} ε₀`
    GammaRate,
    /// `ε_t = γ^{2(t+1)} ε₀`
    GammaSquaredRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub epsilon0: f64,
    pub mode: RateMode,
}

impl StepSchedule {
    pub fn new(epsilon0: f64, mode: RateMode) -> Result<Self> {
        if !(epsilon0 > 0.0) {
            return Err(invalid(format!("epsilon0 must be positive, got {epsilon0}")));
        }
        Ok(Self { epsilon0, mode })
    }

    /// The proximal tolerance `ε_t`.
    pub fn tolerance(&self, gamma: f64, t: usize) -> f64 {
        let exponent = match self.mode {
            RateMode::GammaRate => t + 1,
            RateMode::GammaSquaredRate => 2 * (t + 1),
        };
        gamma.powi(exponent as i32) * self.epsilon0
    }

    /// Per-state `η_s = D(greedy(g_s), π_s) / ε_t`, floored at [`ETA_FLOOR`].
    pub fn step_sizes(&self, g: &DMatrix<f64>, anchor: &Policy, gamma: f64, t: usize) -> Result<Vec<f64>> {
        let eps = self.tolerance(gamma, t);
        (0..anchor.num_states())
            .map(|s| {
                let gs: Vec<f64> = g.row(s).iter().copied().collect();
                let d = neg_entropy_bregman(&greedy_row(&gs)?, &anchor.row(s))?;
                Ok((d / eps).max(ETA_FLOOR))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LookaheadMode {
    /// `Q̃ = r + γ E_{s'}⟨Q̂_{s'}, π̃_{s'}⟩`
    OneStep,
    /// `Q̃ = Q̂^{π̃}`: the critic re-evaluates the intermediary policy.
    #[default]
    Reevaluate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactConfig {
    pub schedule: StepSchedule,
    pub lookahead: LookaheadMode,
}

impl ExactConfig {
    pub fn new(schedule: StepSchedule) -> Self {
        Self {
            schedule,
            lookahead: LookaheadMode::default(),
        }
    }

    pub fn with_lookahead(mut self, lookahead: LookaheadMode) -> Self {
        self.lookahead = lookahead;
        self
    }
}

/// Quantities produced while computing one update; kept for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub q_hat: DMatrix<f64>,
    pub q_tilde: Option<DMatrix<f64>>,
    pub eta: Vec<f64>,
    pub eta_tilde: Option<Vec<f64>>,
    pub critic_calls: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterState {
    pub t: usize,
    pub pi: Policy,
    pub pi_tilde: Option<Policy>,
    /// `Q̂^{t−1}`, the critic output that produced `pi`.
    pub q_prev: Option<DMatrix<f64>>,
    /// `η^{t−1}`.
    pub eta_prev: Option<Vec<f64>>,
    /// Value iterate carried by the VI baseline.
    pub v: Option<DVector<f64>>,
    pub last: Option<StepRecord>,
}

impl IterState {
    pub fn new(pi: Policy) -> Self {
        Self {
            t: 0,
            pi,
            pi_tilde: None,
            q_prev: None,
            eta_prev: None,
            v: None,
            last: None,
        }
    }

    fn advance(&self, pi: Policy, pi_tilde: Option<Policy>, record: StepRecord) -> Self {
        Self {
            t: self.t + 1,
            pi,
            pi_tilde,
            q_prev: Some(record.q_hat.clone()),
            eta_prev: Some(record.eta.clone()),
            v: None,
            last: Some(record),
        }
    }
}

/// Lookahead return through an intermediary policy.
pub fn lookahead_q<R: Rng + ?Sized>(
    mdp: &Mdp,
    q_hat: &DMatrix<f64>,
    pi_tilde: &Policy,
    mode: LookaheadMode,
    critic: &Critic,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    match mode {
        LookaheadMode::OneStep => {
            let v_next = DVector::from_fn(mdp.num_states(), |s, _| {
                q_hat.row(s).iter().zip(pi_tilde.probs().row(s).iter()).map(|(q, p)| q * p).sum()
            });
            Ok(mdp.backup(&v_next))
        }
        LookaheadMode::Reevaluate => critic.q_hat(mdp, pi_tilde, rng),
    }
}

fn momentum_ratio(eta_prev: &[f64], eta: &[f64]) -> Vec<f64> {
    eta_prev
        .iter()
        .zip(eta)
        .map(|(p, c)| (p / c).clamp(0.0, MOMENTUM_RATIO_MAX))
        .collect()
}

/// Plain PMD: `π^{t+1}_s = prox(Q̂^t_s, π^t_s, η^t_s)`.
pub fn step_pmd<R: Rng + ?Sized>(
    state: &IterState,
    mdp: &Mdp,
    critic: &Critic,
    cfg: &ExactConfig,
    rng: &mut R,
) -> Result<IterState> {
    let q_hat = critic.q_hat(mdp, &state.pi, rng)?;
    let eta = cfg.schedule.step_sizes(&q_hat, &state.pi, mdp.gamma(), state.t)?;
    let pi = prox_policy(&q_hat, &state.pi, &eta, &NegEntropy)?;
    Ok(state.advance(
        pi,
        None,
        StepRecord {
            q_hat,
            q_tilde: None,
            eta,
            eta_tilde: None,
            critic_calls: 1,
        },
    ))
}

/// Greedy lookahead followed by a proximal step on the lookahead return.
pub fn step_lookahead<R: Rng + ?Sized>(
    state: &IterState,
    mdp: &Mdp,
    critic: &Critic,
    cfg: &ExactConfig,
    rng: &mut R,
) -> Result<IterState> {
    let q_hat = critic.q_hat(mdp, &state.pi, rng)?;
    let pi_tilde = greedy(&q_hat)?;
    let q_tilde = lookahead_q(mdp, &q_hat, &pi_tilde, cfg.lookahead, critic, rng)?;
    let eta_tilde = cfg.schedule.step_sizes(&q_tilde, &state.pi, mdp.gamma(), state.t)?;
    let pi = prox_policy(&q_tilde, &state.pi, &eta_tilde, &NegEntropy)?;
    let calls = 1 + usize::from(cfg.lookahead == LookaheadMode::Reevaluate);
    Ok(state.advance(
        pi,
        Some(pi_tilde),
        StepRecord {
            q_hat,
            q_tilde: Some(q_tilde),
            eta: eta_tilde.clone(),
            eta_tilde: Some(eta_tilde),
            critic_calls: calls,
        },
    ))
}

struct Extrapolated {
    q_hat: DMatrix<f64>,
    eta: Vec<f64>,
    pi_tilde: Policy,
    q_tilde: DMatrix<f64>,
    eta_tilde: Vec<f64>,
    calls: usize,
}

fn extrapolate<R: Rng + ?Sized>(
    state: &IterState,
    mdp: &Mdp,
    critic: &Critic,
    cfg: &ExactConfig,
    rng: &mut R,
) -> Result<Extrapolated> {
    let q_hat = critic.q_hat(mdp, &state.pi, rng)?;
    let eta = cfg.schedule.step_sizes(&q_hat, &state.pi, mdp.gamma(), state.t)?;
    let pi_tilde = prox_policy(&q_hat, &state.pi, &eta, &NegEntropy)?;
    let q_tilde = lookahead_q(mdp, &q_hat, &pi_tilde, cfg.lookahead, critic, rng)?;
    let eta_tilde = cfg.schedule.step_sizes(&q_tilde, &state.pi, mdp.gamma(), state.t)?;
    Ok(Extrapolated {
        q_hat,
        eta,
        pi_tilde,
        q_tilde,
        eta_tilde,
        calls: 1 + usize::from(cfg.lookahead == LookaheadMode::Reevaluate),
    })
}

/// Extragradient: a tentative proximal step produces `π̃`, whose lookahead
/// return drives the final step taken from `π^t`.
pub fn step_extragradient<R: Rng + ?Sized>(
    state: &IterState,
    mdp: &Mdp,
    critic: &Critic,
    cfg: &ExactConfig,
    rng: &mut R,
) -> Result<IterState> {
    let x = extrapolate(state, mdp, critic, cfg, rng)?;
    let pi = prox_policy(&x.q_tilde, &state.pi, &x.eta_tilde, &NegEntropy)?;
    Ok(state.advance(
        pi,
        Some(x.pi_tilde),
        StepRecord {
            q_hat: x.q_hat,
            q_tilde: Some(x.q_tilde),
            eta: x.eta,
            eta_tilde: Some(x.eta_tilde),
            critic_calls: x.calls,
        },
    ))
}

/// Correction: like extragradient, but the final step is anchored at `π̃`
/// with the corrected direction `Q̃ − (η/η̃) Q̂`.
pub fn step_correction<R: Rng + ?Sized>(
    state: &IterState,
    mdp: &Mdp,
    critic: &Critic,
    cfg: &ExactConfig,
    rng: &mut R,
) -> Result<IterState> {
    let x = extrapolate(state, mdp, critic, cfg, rng)?;
    let direction = DMatrix::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
        x.q_tilde[(s, a)] - x.eta[s] / x.eta_tilde[s] * x.q_hat[(s, a)]
    });
    let pi = prox_policy(&direction, &x.pi_tilde, &x.eta_tilde, &NegEntropy)?;
    Ok(state.advance(
        pi,
        Some(x.pi_tilde),
        StepRecord {
            q_hat: x.q_hat,
            q_tilde: Some(x.q_tilde),
            eta: x.eta,
            eta_tilde: Some(x.eta_tilde),
            critic_calls: x.calls,
        },
    ))
}

fn lazy_inputs(state: &IterState) -> Result<Option<(&DMatrix<f64>, &Vec<f64>)>> {
    match (&state.q_prev, &state.eta_prev) {
        (Some(q), Some(e)) => Ok(Some((q, e))),
        _ if state.t == 0 => Ok(None),
        _ => Err(Error::State(format!(
            "lazy update at t = {} needs the previous critic output and step sizes",
            state.t
        ))),
    }
}

/// Lazy correction: the correction `Q̂^t − Q̂^{t−1}` is applied from `π^t`
/// with the previous step size, then a plain step on `Q̂^t` from `π̃`.
pub fn step_lazy_correction<R: Rng + ?Sized>(
    state: &IterState,
    mdp: &Mdp,
    critic: &Critic,
    cfg: &ExactConfig,
    rng: &mut R,
) -> Result<IterState> {
    let Some((q_prev, eta_prev)) = lazy_inputs(state)? else {
        return step_pmd(state, mdp, critic, cfg, rng);
    };
    let q_hat = critic.q_hat(mdp, &state.pi, rng)?;
    let eta = cfg.schedule.step_sizes(&q_hat, &state.pi, mdp.gamma(), state.t)?;
    let delta = &q_hat - q_prev;
    let pi_tilde = prox_policy(&delta, &state.pi, eta_prev, &NegEntropy)?;
    let pi = prox_policy(&q_hat, &pi_tilde, &eta, &NegEntropy)?;
    Ok(state.advance(
        pi,
        Some(pi_tilde),
        StepRecord {
            q_hat,
            q_tilde: None,
            eta,
            eta_tilde: None,
            critic_calls: 1,
        },
    ))
}

/// Lazy momentum: one proximal step on `Q̂^t + (η^{t−1}/η^t)(Q̂^t − Q̂^{t−1})`.
pub fn step_momentum<R: Rng + ?Sized>(
    state: &IterState,
    mdp: &Mdp,
    critic: &Critic,
    cfg: &ExactConfig,
    rng: &mut R,
) -> Result<IterState> {
    let Some((q_prev, eta_prev)) = lazy_inputs(state)? else {
        return step_pmd(state, mdp, critic, cfg, rng);
    };
    let q_hat = critic.q_hat(mdp, &state.pi, rng)?;
    let eta = cfg.schedule.step_sizes(&q_hat, &state.pi, mdp.gamma(), state.t)?;
    let ratio = momentum_ratio(eta_prev, &eta);
    let direction = DMatrix::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
        q_hat[(s, a)] + ratio[s] * (q_hat[(s, a)] - q_prev[(s, a)])
    });
    let pi = prox_policy(&direction, &state.pi, &eta, &NegEntropy)?;
    Ok(state.advance(
        pi,
        None,
        StepRecord {
            q_hat,
            q_tilde: None,
            eta,
            eta_tilde: None,
            critic_calls: 1,
        },
    ))
}

/// Policy iteration: `π^{t+1} = greedy(Q̂^t)`.
pub fn step_pi<R: Rng + ?Sized>(state: &IterState, mdp: &Mdp, critic: &Critic, rng: &mut R) -> Result<IterState> {
    let q_hat = critic.q_hat(mdp, &state.pi, rng)?;
    let pi = greedy(&q_hat)?;
    Ok(state.advance(
        pi,
        None,
        StepRecord {
            eta: vec![f64::INFINITY; mdp.num_states()],
            q_hat,
            q_tilde: None,
            eta_tilde: None,
            critic_calls: 1,
        },
    ))
}

/// Value iteration: one Bellman-optimality backup of the carried value
/// iterate (initialized at `V^{π^0}`), then greedy.
pub fn step_vi<R: Rng + ?Sized>(state: &IterState, mdp: &Mdp, _critic: &Critic, _rng: &mut R) -> Result<IterState> {
    let v = match &state.v {
        Some(v) => v.clone(),
        None => evaluate(mdp, &state.pi)?.v,
    };
    let q = mdp.backup(&v);
    let v_next = DVector::from_fn(mdp.num_states(), |s, _| {
        q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    });
    let pi = greedy(&q)?;
    let mut next = state.advance(
        pi,
        None,
        StepRecord {
            eta: vec![f64::INFINITY; mdp.num_states()],
            q_hat: q,
            q_tilde: None,
            eta_tilde: None,
            critic_calls: 0,
        },
    );
    next.v = Some(v_next);
    Ok(next)
}

/// Dispatches one exact update of the given kind.
pub fn step_exact<R: Rng + ?Sized>(
    kind: UpdateKind,
    state: &IterState,
    mdp: &Mdp,
    critic: &Critic,
    cfg: &ExactConfig,
    rng: &mut R,
) -> Result<IterState> {
    match kind {
        UpdateKind::Pi => step_pi(state, mdp, critic, rng),
        UpdateKind::Vi => step_vi(state, mdp, critic, rng),
        UpdateKind::Pmd => step_pmd(state, mdp, critic, cfg, rng),
        UpdateKind::Lookahead => step_lookahead(state, mdp, critic, cfg, rng),
        UpdateKind::Extragradient => step_extragradient(state, mdp, critic, cfg, rng),
        UpdateKind::Correction => step_correction(state, mdp, critic, cfg, rng),
        UpdateKind::LazyCorrection => step_lazy_correction(state, mdp, critic, cfg, rng),
        UpdateKind::Momentum => step_momentum(state, mdp, critic, cfg, rng),
    }
}

/// Runs `iterations` exact updates and returns every iterate, starting with
/// the initial state.
pub fn run_exact<R: Rng + ?Sized>(
    kind: UpdateKind,
    pi0: Policy,
    mdp: &Mdp,
    critic: &Critic,
    cfg: &ExactConfig,
    iterations: usize,
    rng: &mut R,
) -> Result<Vec<IterState>> {
    let mut states = Vec::with_capacity(iterations + 1);
    states.push(IterState::new(pi0));
    for _ in 0..iterations {
        let next = step_exact(kind, states.last().expect("non-empty"), mdp, critic, cfg, rng)?;
        states.push(next);
    }
    Ok(states)
}
