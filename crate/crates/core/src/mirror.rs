//! Mirror maps on the probability simplex, their Bregman divergences and the
//! proximal / projected updates they induce.
//!
//! Negative entropy is the map the optimizers use: its divergence is KL, its
//! projection of a dual point is a softmax and its proximal step is a
//! multiplicative-weights update. The squared Euclidean norm is provided as a
//! second instance of the [`MirrorMap`] trait.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::mdp::Policy;

/// Probabilities are clamped into `[PROB_FLOOR, 1]` before logs are taken.
pub const PROB_FLOOR: f64 = 1e-15;

pub trait MirrorMap {
    /// `h(x)` for `x` in the simplex.
    fn value(&self, x: &[f64]) -> f64;

    /// `∇h(x)`.
    fn grad(&self, x: &[f64]) -> Vec<f64>;

    /// Maps a dual point back to the simplex: `proj_Δ(∇h*(y))`.
    fn project(&self, y: &[f64]) -> Result<Vec<f64>>;

    /// `D_h(x, y) = h(x) − h(y) − ⟨∇h(y), x − y⟩`.
    fn bregman(&self, x: &[f64], y: &[f64]) -> f64 {
        let g = self.grad(y);
        self.value(x) - self.value(y) - dot(&g, x) + dot(&g, y)
    }

    /// `argmin_{p ∈ Δ} −η⟨q, p⟩ + D_h(p, π)`.
    fn prox(&self, q: &[f64], pi: &[f64], eta: f64) -> Result<Vec<f64>> {
        check_eta(eta)?;
        check_finite(q)?;
        let g = self.grad(pi);
        let y: Vec<f64> = g.iter().zip(q).map(|(gi, qi)| gi + eta * qi).collect();
        self.project(&y)
    }
}

/// Negative Boltzmann-Shannon entropy `Σ x log x`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NegEntropy;

/// `½‖x‖²`, whose projection is the Euclidean simplex projection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Euclidean;

impl MirrorMap for NegEntropy {
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum()
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        clamp_row(x).iter().map(|v| v.ln() + 1.0).collect()
    }

    fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        softmax(y)
    }

    fn bregman(&self, x: &[f64], y: &[f64]) -> f64 {
        kl(x, &clamp_row(y))
    }

    fn prox(&self, q: &[f64], pi: &[f64], eta: f64) -> Result<Vec<f64>> {
        check_eta(eta)?;
        check_finite(q)?;
        let logits: Vec<f64> = clamp_row(pi)
            .iter()
            .zip(q)
            .map(|(p, qi)| p.ln() + eta * qi)
            .collect();
        softmax(&logits)
    }
}

impl MirrorMap for Euclidean {
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, x)
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_finite(y)?;
        Ok(euclidean_simplex_projection(y))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("step size must be positive and finite, got {eta}")))
    }
}

fn check_finite(y: &[f64]) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid("non-finite entry in dual vector"))
    }
}

/// Clamps entries into `[PROB_FLOOR, 1]` and renormalizes.
pub fn clamp_row(x: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = x.iter().map(|v| v.clamp(PROB_FLOOR, 1.0)).collect();
    let sum: f64 = clamped.iter().sum();
    clamped.into_iter().map(|v| v / sum).collect()
}

/// Overflow-safe softmax.
pub fn softmax(y: &[f64]) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(invalid("empty logit vector"));
    }
    if y.iter().any(|v| v.is_nan()) {
        return Err(invalid("NaN logit"));
    }
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(invalid("non-finite logits"));
    }
    let exps: Vec<f64> = y.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

/// KL divergence `Σ p log(p/q)` with `0 log 0 = 0`; `q` is floor-clamped.
pub fn neg_entropy_bregman(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(invalid("length mismatch"));
    }
    if p.iter().chain(q).any(|v| v.is_nan() || *v < 0.0) {
        return Err(invalid("negative or NaN probability"));
    }
    Ok(kl(p, &clamp_row(q)))
}

/// Bregman projection of a dual point onto the simplex.
pub fn bregman_project(y: &[f64], map: &impl MirrorMap) -> Result<Vec<f64>> {
    check_finite(y)?;
    map.project(y)
}

/// Exact proximal policy step for one state.
pub fn prox_step(q: &[f64], pi: &[f64], eta: f64, map: &impl MirrorMap) -> Result<Vec<f64>> {
    if q.len() != pi.len() {
        return Err(invalid("length mismatch between q and pi"));
    }
    map.prox(q, pi, eta)
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn euclidean_simplex_projection(y: &[f64]) -> Vec<f64> {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Dual (logit) representation of a policy under negative entropy,
/// canonicalized so that each row's maximum logit is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPolicy {
    logits: DMatrix<f64>,
}

impl DualPolicy {
    pub fn from_policy(policy: &Policy) -> Self {
        let (ns, na) = (policy.num_states(), policy.num_actions());
        let mut logits = DMatrix::zeros(ns, na);
        for s in 0..ns {
            let row: Vec<f64> = clamp_row(&policy.row(s)).iter().map(|p| p.ln()).collect();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (a, l) in row.into_iter().enumerate() {
                logits[(s, a)] = l - max;
            }
        }
        Self { logits }
    }

    pub fn logits(&self) -> &DMatrix<f64> {
        &self.logits
    }

    pub fn to_policy(&self) -> Policy {
        Policy::new(row_softmax(&self.logits)).expect("softmax rows lie in the simplex")
    }
}

/// Row-wise softmax of a logit matrix.
pub fn row_softmax(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(logits.nrows(), logits.ncols());
    for s in 0..logits.nrows() {
        let max = logits.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.row(s).iter().map(|v| (v - max).exp()).sum();
        for a in 0..logits.ncols() {
            out[(s, a)] = (logits[(s, a)] - max).exp() / z;
        }
    }
    out
}

/// Applies [`prox_step`] to every state of a policy with per-state step sizes.
pub fn prox_policy(
    q: &DMatrix<f64>,
    pi: &Policy,
    eta: &[f64],
    map: &impl MirrorMap,
) -> Result<Policy> {
    let (ns, na) = (pi.num_states(), pi.num_actions());
    if q.shape() != (ns, na) || eta.len() != ns {
        return Err(invalid("shape mismatch in policy prox step"));
    }
    let mut out = DMatrix::zeros(ns, na);
    for s in 0..ns {
        let qs: Vec<f64> = q.row(s).iter().copied().collect();
        let row = prox_step(&qs, &pi.row(s), eta[s], map)?;
        for (a, p) in row.into_iter().enumerate() {
            out[(s, a)] = p;
        }
    }
    Policy::new(out)
}
