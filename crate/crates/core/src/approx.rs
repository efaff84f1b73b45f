//! Approximate PMD(++) with tabular softmax policies.
//!
//! Each outer iteration builds a composite surrogate
//! `ℓ(θ) = Σ_s d_s [−⟨G_s, π^θ_s⟩ + (1/η_s) KL(π^θ_s ‖ anchor_s)]`
//! and runs a fixed number of full-batch gradient steps on the logits.
//! Two-policy variants keep the intermediary policy in its own logits `w`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critics::Critic;
use crate::error::{invalid, Error, Result};
use crate::mdp::{greedy, visitation, Mdp, Policy};
use crate::mirror::{row_softmax, PROB_FLOOR};
use crate::pmd::{lookahead_q, LookaheadMode, StepRecord, StepSchedule, UpdateKind, MOMENTUM_RATIO_MAX};

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricPolicy {
    theta: DMatrix<f64>,
}

impl ParametricPolicy {
    pub fn new(theta: DMatrix<f64>) -> Result<Self> {
        if theta.nrows() == 0 || theta.ncols() == 0 {
            return Err(invalid("empty logit matrix"));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(Self { theta })
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            theta: DMatrix::zeros(num_states, num_actions),
        }
    }

    /// Logits `log π` (clamped), i.e. a parameter that induces `policy`.
    pub fn from_policy(policy: &Policy) -> Self {
        Self {
            theta: policy.probs().map(|p| p.max(PROB_FLOOR).ln()),
        }
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn policy(&self) -> Policy {
        Policy::new(row_softmax(&self.theta)).expect("softmax rows are on the simplex")
    }
}

fn log_softmax_row(theta: &DMatrix<f64>, s: usize) -> Vec<f64> {
    let row = theta.row(s);
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerLoopConfig {
    pub k: usize,
    pub n: usize,
    pub beta: f64,
}

impl InnerLoopConfig {
    pub fn new(k: usize, n: usize, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {beta}")));
        }
        Ok(Self { k, n, beta })
    }
}

pub trait Objective {
    fn loss(&self, theta: &DMatrix<f64>) -> f64;
    fn grad(&self, theta: &DMatrix<f64>) -> DMatrix<f64>;
}

/// `Σ_s d_s [−⟨G_s, π^θ_s⟩ + (1/η_s) KL(π^θ_s ‖ anchor_s)]`
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub weights: Vec<f64>,
    pub linear: DMatrix<f64>,
    /// Log of the (clamped) anchor policy.
    pub log_anchor: DMatrix<f64>,
    pub inv_eta: Vec<f64>,
}

impl Surrogate {
    pub fn new(weights: &[f64], linear: DMatrix<f64>, anchor: &Policy, eta: &[f64]) -> Result<Self> {
        let (ns, na) = (anchor.num_states(), anchor.num_actions());
        if weights.len() != ns || eta.len() != ns || linear.shape() != (ns, na) {
            return Err(invalid("surrogate inputs have mismatched shapes"));
        }
        if eta.iter().any(|e| !(*e > 0.0)) {
            return Err(invalid("step sizes must be positive"));
        }
        Ok(Self {
            weights: weights.to_vec(),
            linear,
            log_anchor: anchor.probs().map(|p| p.max(PROB_FLOOR).ln()),
            inv_eta: eta.iter().map(|e| 1.0 / e).collect(),
        })
    }

    /// Pure projection objective `Σ_s d_s KL(π^θ_s ‖ target_s)`.
    pub fn projection(weights: &[f64], target: &Policy) -> Result<Self> {
        let (ns, na) = (target.num_states(), target.num_actions());
        Self::new(weights, DMatrix::zeros(ns, na), target, &vec![1.0; ns])
    }
}

impl Objective for Surrogate {
    fn loss(&self, theta: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for s in 0..theta.nrows() {
            let logp = log_softmax_row(theta, s);
            let mut lin = 0.0;
            let mut kl = 0.0;
            for (a, lp) in logp.iter().enumerate() {
                let p = lp.exp();
                lin += self.linear[(s, a)] * p;
                if p > 0.0 {
                    kl += p * (lp - self.log_anchor[(s, a)]);
                }
            }
            total += self.weights[s] * (-lin + self.inv_eta[s] * kl);
        }
        total
    }

    fn grad(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        let (ns, na) = theta.shape();
        let mut g = DMatrix::zeros(ns, na);
        for s in 0..ns {
            let logp = log_softmax_row(theta, s);
            let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            let dl: Vec<f64> = (0..na)
                .map(|a| -self.linear[(s, a)] + self.inv_eta[s] * (logp[a] - self.log_anchor[(s, a)]))
                .collect();
            let mean: f64 = p.iter().zip(&dl).map(|(x, y)| x * y).sum();
            for a in 0..na {
                g[(s, a)] = self.weights[s] * p[a] * (dl[a] - mean);
            }
        }
        g
    }
}

/// Exactly `steps` full-batch GD updates `θ ← θ − β∇ℓ(θ)` from `theta0`.
pub fn inner_loop_gd<O: Objective + ?Sized>(
    theta0: &DMatrix<f64>,
    objective: &O,
    steps: usize,
    beta: f64,
) -> Result<DMatrix<f64>> {
    let mut theta = theta0.clone();
    for i in 0..steps {
        let loss = objective.loss(&theta);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite surrogate loss at inner iteration {i}")));
        }
        theta -= objective.grad(&theta) * beta;
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite parameters after {steps} inner iterations")));
    }
    Ok(theta)
}

/// Everything a surrogate may refer to during one outer iteration.
#[derive(Debug, Clone, Default)]
pub struct SurrogateContext {
    pub weights: Vec<f64>,
    pub pi: Option<Policy>,
    pub pi_tilde: Option<Policy>,
    pub q_hat: Option<DMatrix<f64>>,
    pub q_prev: Option<DMatrix<f64>>,
    pub q_tilde: Option<DMatrix<f64>>,
    pub eta: Option<Vec<f64>>,
    pub eta_prev: Option<Vec<f64>>,
    pub eta_tilde: Option<Vec<f64>>,
}

fn need<'a, T>(x: &'a Option<T>, what: &str, variant: UpdateKind) -> Result<&'a T> {
    x.as_ref()
        .ok_or_else(|| invalid(format!("{variant} surrogate needs `{what}` in its context")))
}

/// Surrogate for the main policy `π^θ`.
pub fn main_surrogate(variant: UpdateKind, ctx: &SurrogateContext) -> Result<Surrogate> {
    let pi = need(&ctx.pi, "pi", variant)?;
    let q_hat = need(&ctx.q_hat, "q_hat", variant)?;
    match variant {
        UpdateKind::Pmd => Surrogate::new(&ctx.weights, q_hat.clone(), pi, need(&ctx.eta, "eta", variant)?),
        UpdateKind::Lookahead | UpdateKind::Extragradient => Surrogate::new(
            &ctx.weights,
            need(&ctx.q_tilde, "q_tilde", variant)?.clone(),
            pi,
            need(&ctx.eta_tilde, "eta_tilde", variant)?,
        ),
        UpdateKind::Correction => {
            let q_tilde = need(&ctx.q_tilde, "q_tilde", variant)?;
            let eta = need(&ctx.eta, "eta", variant)?;
            let eta_tilde = need(&ctx.eta_tilde, "eta_tilde", variant)?;
            let g = DMatrix::from_fn(q_hat.nrows(), q_hat.ncols(), |s, a| {
                q_tilde[(s, a)] - eta[s] / eta_tilde[s] * q_hat[(s, a)]
            });
            Surrogate::new(&ctx.weights, g, need(&ctx.pi_tilde, "pi_tilde", variant)?, eta_tilde)
        }
        UpdateKind::LazyCorrection => Surrogate::new(
            &ctx.weights,
            q_hat.clone(),
            need(&ctx.pi_tilde, "pi_tilde", variant)?,
            need(&ctx.eta, "eta", variant)?,
        ),
        UpdateKind::Momentum => {
            let q_prev = need(&ctx.q_prev, "q_prev", variant)?;
            let eta = need(&ctx.eta, "eta", variant)?;
            let eta_prev = need(&ctx.eta_prev, "eta_prev", variant)?;
            let g = DMatrix::from_fn(q_hat.nrows(), q_hat.ncols(), |s, a| {
                let ratio = (eta_prev[s] / eta[s]).clamp(0.0, MOMENTUM_RATIO_MAX);
                q_hat[(s, a)] + ratio * (q_hat[(s, a)] - q_prev[(s, a)])
            });
            Surrogate::new(&ctx.weights, g, pi, eta)
        }
        UpdateKind::Pi | UpdateKind::Vi => Err(invalid(format!("{variant} has no parametric surrogate"))),
    }
}

/// Surrogate for the separately parametrized intermediary policy `π̃^w`.
pub fn intermediary_surrogate(variant: UpdateKind, ctx: &SurrogateContext) -> Result<Surrogate> {
    let pi = need(&ctx.pi, "pi", variant)?;
    let q_hat = need(&ctx.q_hat, "q_hat", variant)?;
    match variant {
        UpdateKind::Extragradient | UpdateKind::Correction => {
            Surrogate::new(&ctx.weights, q_hat.clone(), pi, need(&ctx.eta, "eta", variant)?)
        }
        UpdateKind::LazyCorrection => Surrogate::new(
            &ctx.weights,
            q_hat - need(&ctx.q_prev, "q_prev", variant)?,
            pi,
            need(&ctx.eta_prev, "eta_prev", variant)?,
        ),
        _ => Err(invalid(format!("{variant} has no parametrized intermediary policy"))),
    }
}

/// Value of the main-policy surrogate at `theta`.
pub fn surrogate_loss(theta: &ParametricPolicy, variant: UpdateKind, ctx: &SurrogateContext) -> Result<f64> {
    Ok(main_surrogate(variant, ctx)?.loss(theta.theta()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxConfig {
    pub schedule: StepSchedule,
    pub lookahead: LookaheadMode,
    pub inner: InnerLoopConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxState {
    pub t: usize,
    pub theta: ParametricPolicy,
    pub w: Option<ParametricPolicy>,
    pub q_prev: Option<DMatrix<f64>>,
    pub eta_prev: Option<Vec<f64>>,
    /// GD updates applied during the last outer iteration.
    pub gd_steps: usize,
    pub last: Option<StepRecord>,
}

impl ApproxState {
    pub fn new(theta: ParametricPolicy) -> Self {
        Self {
            t: 0,
            theta,
            w: None,
            q_prev: None,
            eta_prev: None,
            gd_steps: 0,
            last: None,
        }
    }

    pub fn policy(&self) -> Policy {
        self.theta.policy()
    }
}

fn history(state: &ApproxState, q_hat: &DMatrix<f64>, eta: &[f64]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    match (&state.q_prev, &state.eta_prev) {
        (Some(q), Some(e)) => Ok((q.clone(), e.clone())),
        _ if state.t == 0 => Ok((q_hat.clone(), eta.to_vec())),
        _ => Err(Error::State(format!(
            "lazy update at t = {} needs the previous critic output and step sizes",
            state.t
        ))),
    }
}

/// One outer iteration of approximate PMD(++).
pub fn step_approx<R: Rng + ?Sized>(
    variant: UpdateKind,
    state: &ApproxState,
    mdp: &Mdp,
    critic: &Critic,
    cfg: &ApproxConfig,
    rng: &mut R,
) -> Result<ApproxState> {
    let inner = cfg.inner;
    let pi = state.theta.policy();
    let weights: Vec<f64> = visitation(mdp, &pi)?.iter().copied().collect();
    let q_hat = critic.q_hat(mdp, &pi, rng)?;
    let eta = cfg.schedule.step_sizes(&q_hat, &pi, mdp.gamma(), state.t)?;
    let mut ctx = SurrogateContext {
        weights,
        pi: Some(pi.clone()),
        q_hat: Some(q_hat.clone()),
        eta: Some(eta.clone()),
        ..Default::default()
    };
    let mut calls = 1;
    let mut gd_steps = 0;
    let mut w_next = state.w.clone();
    let theta_steps;

    match variant {
        UpdateKind::Pmd => theta_steps = inner.k,
        UpdateKind::Lookahead => {
            let pi_tilde = greedy(&q_hat)?;
            let q_tilde = lookahead_q(mdp, &q_hat, &pi_tilde, cfg.lookahead, critic, rng)?;
            calls += usize::from(cfg.lookahead == LookaheadMode::Reevaluate);
            ctx.eta_tilde = Some(cfg.schedule.step_sizes(&q_tilde, &pi, mdp.gamma(), state.t)?);
            ctx.q_tilde = Some(q_tilde);
            ctx.pi_tilde = Some(pi_tilde);
            theta_steps = inner.k;
        }
        UpdateKind::Extragradient | UpdateKind::Correction => {
            let w0 = state.w.as_ref().unwrap_or(&state.theta);
            let w = inner_loop_gd(w0.theta(), &intermediary_surrogate(variant, &ctx)?, inner.n, inner.beta)?;
            gd_steps += inner.n;
            let w = ParametricPolicy::new(w)?;
            let pi_tilde = w.policy();
            let q_tilde = lookahead_q(mdp, &q_hat, &pi_tilde, cfg.lookahead, critic, rng)?;
            calls += usize::from(cfg.lookahead == LookaheadMode::Reevaluate);
            ctx.eta_tilde = Some(cfg.schedule.step_sizes(&q_tilde, &pi, mdp.gamma(), state.t)?);
            ctx.q_tilde = Some(q_tilde);
            ctx.pi_tilde = Some(pi_tilde);
            w_next = Some(w);
            theta_steps = inner.k;
        }
        UpdateKind::LazyCorrection => {
            let (q_prev, eta_prev) = history(state, &q_hat, &eta)?;
            ctx.q_prev = Some(q_prev);
            ctx.eta_prev = Some(eta_prev);
            let w0 = state.w.as_ref().unwrap_or(&state.theta);
            let w = inner_loop_gd(w0.theta(), &intermediary_surrogate(variant, &ctx)?, inner.n, inner.beta)?;
            gd_steps += inner.n;
            let w = ParametricPolicy::new(w)?;
            ctx.pi_tilde = Some(w.policy());
            w_next = Some(w);
            theta_steps = inner.k;
        }
        UpdateKind::Momentum => {
            let (q_prev, eta_prev) = history(state, &q_hat, &eta)?;
            ctx.q_prev = Some(q_prev);
            ctx.eta_prev = Some(eta_prev);
            theta_steps = inner.k + inner.n;
        }
        UpdateKind::Pi | UpdateKind::Vi => {
            return Err(invalid(format!("{variant} is not an approximate update")));
        }
    }

    let theta = inner_loop_gd(state.theta.theta(), &main_surrogate(variant, &ctx)?, theta_steps, inner.beta)?;
    gd_steps += theta_steps;
    Ok(ApproxState {
        t: state.t + 1,
        theta: ParametricPolicy::new(theta)?,
        w: w_next,
        q_prev: Some(q_hat.clone()),
        eta_prev: Some(eta.clone()),
        gd_steps,
        last: Some(StepRecord {
            q_hat,
            q_tilde: ctx.q_tilde,
            eta,
            eta_tilde: ctx.eta_tilde,
            critic_calls: calls,
        }),
    })
}

/// Lazy momentum in projected-gradient form: GD on
/// `Σ_s d_s KL(π^θ_s ‖ softmax(log π^t_s + η_s Q̂_s + η_s r_s (Q̂_s − Q̂^{t−1}_s)))`
/// with `r_s = η^{t−1}_s/η^t_s` clamped as in the proximal form.
pub fn step_pgd_form<R: Rng + ?Sized>(
    state: &ApproxState,
    mdp: &Mdp,
    critic: &Critic,
    cfg: &ApproxConfig,
    rng: &mut R,
) -> Result<ApproxState> {
    let pi = state.theta.policy();
    let weights: Vec<f64> = visitation(mdp, &pi)?.iter().copied().collect();
    let q_hat = critic.q_hat(mdp, &pi, rng)?;
    let eta = cfg.schedule.step_sizes(&q_hat, &pi, mdp.gamma(), state.t)?;
    let (q_prev, eta_prev) = history(state, &q_hat, &eta)?;
    let logits = DMatrix::from_fn(pi.num_states(), pi.num_actions(), |s, a| {
        let ratio = (eta_prev[s] / eta[s]).clamp(0.0, MOMENTUM_RATIO_MAX);
        let dir = q_hat[(s, a)] + ratio * (q_hat[(s, a)] - q_prev[(s, a)]);
        pi.probs()[(s, a)].max(PROB_FLOOR).ln() + eta[s] * dir
    });
    let target = Policy::new(row_softmax(&logits))?;
    let objective = Surrogate::projection(&weights, &target)?;
    let theta = inner_loop_gd(state.theta.theta(), &objective, cfg.inner.k, cfg.inner.beta)?;
    Ok(ApproxState {
        t: state.t + 1,
        theta: ParametricPolicy::new(theta)?,
        w: None,
        q_prev: Some(q_hat.clone()),
        eta_prev: Some(eta.clone()),
        gd_steps: cfg.inner.k,
        last: Some(StepRecord {
            q_hat,
            q_tilde: None,
            eta,
            eta_tilde: None,
            critic_calls: 1,
        }),
    })
}
