//! Action-value providers: exact model-based evaluation, exact values plus
//! controlled Gaussian noise, and truncated Monte-Carlo rollouts.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::{evaluate, Mdp, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Critic {
    Exact,
    /// `Q + N(0, τ²)` drawn i.i.d. per state-action entry.
    Noisy { tau: f64 },
    /// `m` truncated rollouts per state-action pair.
    MonteCarlo { m: usize },
}

impl Critic {
    pub fn q_hat<R: Rng + ?Sized>(&self, mdp: &Mdp, policy: &Policy, rng: &mut R) -> Result<DMatrix<f64>> {
        match *self {
            Critic::Exact => exact_q(mdp, policy),
            Critic::Noisy { tau } => noisy_q(mdp, policy, tau, rng),
            Critic::MonteCarlo { m } => monte_carlo_q(mdp, policy, m, rng),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Critic::Exact)
    }
}

pub fn exact_q(mdp: &Mdp, policy: &Policy) -> Result<DMatrix<f64>> {
    Ok(evaluate(mdp, policy)?.q)
}

pub fn noisy_q<R: Rng + ?Sized>(mdp: &Mdp, policy: &Policy, tau: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(invalid(format!("noise scale must be >= 0, got {tau}")));
    }
    let mut q = exact_q(mdp, policy)?;
    if tau > 0.0 {
        let normal = Normal::new(0.0, tau).map_err(|e| invalid(e.to_string()))?;
        for s in 0..q.nrows() {
            for a in 0..q.ncols() {
                q[(s, a)] += normal.sample(rng);
            }
        }
    }
    Ok(q)
}

/// Rollout length `⌈1/(1−γ)⌉`, robust to the rounding of `1/(1−γ)`.
pub fn rollout_horizon(gamma: f64) -> usize {
    let h = 1.0 / (1.0 - gamma);
    let r = h.round();
    if (h - r).abs() < 1e-9 {
        r.max(1.0) as usize
    } else {
        h.ceil() as usize
    }
}

fn sample_index<R: Rng + ?Sized>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Monte-Carlo estimate: for every `(s, a)`, `m` trajectories start in `s`
/// with forced first action `a`, then follow `π` for `⌈1/(1−γ)⌉` steps in
/// total. The estimate is the mean truncated discounted return of those
/// trajectories, each trajectory counting the start state once.
pub fn monte_carlo_q<R: Rng + ?Sized>(mdp: &Mdp, policy: &Policy, m: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(invalid("Monte-Carlo critic needs m >= 1"));
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    if policy.num_states() != ns || policy.num_actions() != na {
        return Err(invalid("policy shape does not match MDP"));
    }
    let horizon = rollout_horizon(mdp.gamma());
    let p = mdp.transition();
    let r = mdp.reward();
    let pi = policy.probs();
    let mut q = DMatrix::zeros(ns, na);
    for s0 in 0..ns {
        for a0 in 0..na {
            let mut total = 0.0;
            for _ in 0..m {
                let (mut s, mut a) = (s0, a0);
                let mut discount = 1.0;
                let mut ret = 0.0;
                for step in 0..horizon {
                    ret += discount * r[(s, a)];
                    discount *= mdp.gamma();
                    if step + 1 == horizon {
                        break;
                    }
                    s = sample_index(p.row(s * na + a).iter().copied(), rng);
                    a = sample_index(pi.row(s).iter().copied(), rng);
                }
                total += ret;
            }
            q[(s0, a0)] = total / m as f64;
        }
    }
    Ok(q)
}
