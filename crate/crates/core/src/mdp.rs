//! Finite discounted MDPs, exact policy evaluation and the Bellman machinery
//! the optimizers are built on.
//!
//! Transitions are stored as a dense `(|S|·|A|) × |S|` matrix whose row
//! `s·|A| + a` is the next-state distribution `P(·|s, a)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;
const POLICY_TOL: f64 = 1e-10;
/// Maximizers within this distance of the row maximum share the greedy mass.
pub const GREEDY_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    transition: DMatrix<f64>,
    reward: DMatrix<f64>,
    gamma: f64,
    rho: DVector<f64>,
}

impl Mdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: DMatrix<f64>,
        reward: DMatrix<f64>,
        gamma: f64,
        rho: DVector<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(invalid("MDP needs at least one state and one action"));
        }
        if transition.shape() != (num_states * num_actions, num_states) {
            return Err(invalid(format!(
                "transition matrix has shape {:?}, expected ({}, {})",
                transition.shape(),
                num_states * num_actions,
                num_states
            )));
        }
        if reward.shape() != (num_states, num_actions) {
            return Err(invalid(format!(
                "reward matrix has shape {:?}, expected ({num_states}, {num_actions})",
                reward.shape()
            )));
        }
        if rho.len() != num_states {
            return Err(invalid(format!(
                "initial distribution has length {}, expected {num_states}",
                rho.len()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(invalid(format!("discount {gamma} outside [0, 1)")));
        }
        for (i, row) in transition.row_iter().enumerate() {
            check_distribution(row.iter().copied(), ROW_SUM_TOL).map_err(|e| {
                invalid(format!(
                    "transition row (s={}, a={}): {e}",
                    i / num_actions,
                    i % num_actions
                ))
            })?;
        }
        check_distribution(rho.iter().copied(), ROW_SUM_TOL)
            .map_err(|e| invalid(format!("initial distribution: {e}")))?;
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(invalid("reward contains non-finite entries"));
        }
        Ok(Self {
            num_states,
            num_actions,
            transition,
            reward,
            gamma,
            rho,
        })
    }

    /// Builds an MDP from nested `P[s][a][s']` and `r[s][a]` arrays.
    pub fn from_nested(
        transition: &[Vec<Vec<f64>>],
        reward: &[Vec<f64>],
        gamma: f64,
        rho: &[f64],
    ) -> Result<Self> {
        let num_states = transition.len();
        let num_actions = transition.first().map_or(0, Vec::len);
        let mut p = DMatrix::zeros(num_states * num_actions, num_states);
        for (s, per_action) in transition.iter().enumerate() {
            if per_action.len() != num_actions {
                return Err(invalid(format!("state {s} lists {} actions", per_action.len())));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != num_states {
                    return Err(invalid(format!("P[{s}][{a}] has length {}", row.len())));
                }
                for (sp, &v) in row.iter().enumerate() {
                    p[(s * num_actions + a, sp)] = v;
                }
            }
        }
        if reward.len() != num_states || reward.iter().any(|r| r.len() != num_actions) {
            return Err(invalid("reward must be |S| x |A|"));
        }
        let r = DMatrix::from_fn(num_states, num_actions, |s, a| reward[s][a]);
        Self::new(
            num_states,
            num_actions,
            p,
            r,
            gamma,
            DVector::from_column_slice(rho),
        )
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &DVector<f64> {
        &self.rho
    }

    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }

    /// The `(|S|·|A|) × |S|` transition matrix.
    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn next_state_probs(&self, s: usize, a: usize) -> Vec<f64> {
        self.transition.row(s * self.num_actions + a).iter().copied().collect()
    }

    /// Copy with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.transition.clone(),
            self.reward.clone(),
            gamma,
            self.rho.clone(),
        )
    }

    /// Copy with a different initial-state distribution.
    pub fn with_rho(&self, rho: DVector<f64>) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.transition.clone(),
            self.reward.clone(),
            self.gamma,
            rho,
        )
    }

    fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.probs.shape() != (self.num_states, self.num_actions) {
            return Err(invalid(format!(
                "policy has shape {:?}, MDP is {}x{}",
                policy.probs.shape(),
                self.num_states,
                self.num_actions
            )));
        }
        Ok(())
    }

    /// State-to-state transition matrix `P^π`.
    pub fn policy_transition(&self, policy: &Policy) -> Result<DMatrix<f64>> {
        self.check_policy(policy)?;
        let (ns, na) = (self.num_states, self.num_actions);
        let mut p = DMatrix::zeros(ns, ns);
        for s in 0..ns {
            for a in 0..na {
                let w = policy.probs[(s, a)];
                if w == 0.0 {
                    continue;
                }
                let row = self.transition.row(s * na + a);
                for sp in 0..ns {
                    p[(s, sp)] += w * row[sp];
                }
            }
        }
        Ok(p)
    }

    /// Expected one-step reward `r^π`.
    pub fn policy_reward(&self, policy: &Policy) -> Result<DVector<f64>> {
        self.check_policy(policy)?;
        Ok(DVector::from_fn(self.num_states, |s, _| {
            (0..self.num_actions)
                .map(|a| policy.probs[(s, a)] * self.reward[(s, a)])
                .sum()
        }))
    }

    /// `(I - γ P^π)`.
    pub fn resolvent_system(&self, policy: &Policy) -> Result<DMatrix<f64>> {
        let p = self.policy_transition(policy)?;
        Ok(DMatrix::identity(self.num_states, self.num_states) - p * self.gamma)
    }

    /// `E_{s'}[x_{s'}]` for every state-action pair, as an `|S| × |A|` matrix.
    pub fn expected_next(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let flat = &self.transition * x;
        DMatrix::from_fn(self.num_states, self.num_actions, |s, a| {
            flat[s * self.num_actions + a]
        })
    }

    /// One-step backup `r + γ P V`.
    pub fn backup(&self, v: &DVector<f64>) -> DMatrix<f64> {
        &self.reward + self.expected_next(v) * self.gamma
    }
}

fn check_distribution(values: impl Iterator<Item = f64>, tol: f64) -> std::result::Result<(), String> {
    let mut sum = 0.0;
    for v in values {
        if !v.is_finite() || v < 0.0 {
            return Err(format!("entry {v} is negative or non-finite"));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > tol {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// JSON form of an MDP: `{num_states, num_actions, gamma, rho, transition, reward}`
/// with `transition[s][a][s']` and `reward[s][a]`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MdpJson {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub rho: Vec<f64>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
}

impl TryFrom<MdpJson> for Mdp {
    type Error = Error;

    fn try_from(j: MdpJson) -> Result<Self> {
        if j.transition.len() != j.num_states {
            return Err(invalid(format!(
                "num_states = {} but transition lists {} states",
                j.num_states,
                j.transition.len()
            )));
        }
        if j.transition.iter().any(|r| r.len() != j.num_actions) {
            return Err(invalid(format!("every transition[s] must list {} actions", j.num_actions)));
        }
        Mdp::from_nested(&j.transition, &j.reward, j.gamma, &j.rho)
    }
}

impl From<&Mdp> for MdpJson {
    fn from(m: &Mdp) -> Self {
        let (ns, na) = (m.num_states, m.num_actions);
        Self {
            num_states: ns,
            num_actions: na,
            gamma: m.gamma,
            rho: m.rho.iter().copied().collect(),
            transition: (0..ns)
                .map(|s| {
                    (0..na)
                        .map(|a| m.transition.row(s * na + a).iter().copied().collect())
                        .collect()
                })
                .collect(),
            reward: (0..ns)
                .map(|s| (0..na).map(|a| m.reward[(s, a)]).collect())
                .collect(),
        }
    }
}

impl Mdp {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let j: MdpJson =
            serde_json::from_str(s).map_err(|e| invalid(format!("MDP JSON: {e}")))?;
        j.try_into()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&MdpJson::from(self)).expect("MDP serializes")
    }
}

/// A stationary stochastic policy, one probability row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: DMatrix<f64>,
}

impl Policy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        for (s, row) in probs.row_iter().enumerate() {
            check_distribution(row.iter().copied(), POLICY_TOL)
                .map_err(|e| invalid(format!("policy row {s}: {e}")))?;
        }
        Ok(Self { probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let na = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != na) {
            return Err(invalid("policy rows have unequal lengths"));
        }
        Self::new(DMatrix::from_fn(rows.len(), na, |s, a| rows[s][a]))
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            probs: DMatrix::from_element(num_states, num_actions, 1.0 / num_actions as f64),
        }
    }

    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let mut probs = DMatrix::zeros(actions.len(), num_actions);
        for (s, &a) in actions.iter().enumerate() {
            probs[(s, a)] = 1.0;
        }
        Self { probs }
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn into_probs(self) -> DMatrix<f64> {
        self.probs
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn row(&self, s: usize) -> Vec<f64> {
        self.probs.row(s).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.num_states()).map(|s| self.row(s)).collect()
    }

    /// Largest per-state total-variation distance `max_s ½‖π_s − π'_s‖₁`.
    pub fn total_variation(&self, other: &Policy) -> f64 {
        (0..self.num_states())
            .map(|s| {
                0.5 * self
                    .probs
                    .row(s)
                    .iter()
                    .zip(other.probs.row(s).iter())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctions {
    pub v: DVector<f64>,
    pub q: DMatrix<f64>,
}

impl ValueFunctions {
    /// `V_ρ = ⟨ρ, V⟩`.
    pub fn v_rho(&self, rho: &DVector<f64>) -> f64 {
        self.v.dot(rho)
    }
}

/// Exact evaluation through a dense LU solve of `(I − γP^π)V = r^π`.
pub fn evaluate(mdp: &Mdp, policy: &Policy) -> Result<ValueFunctions> {
    let a = mdp.resolvent_system(policy)?;
    let b = mdp.policy_reward(policy)?;
    let v = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numeric(format!("singular Bellman system (gamma = {})", mdp.gamma)))?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite value function".into()));
    }
    let q = mdp.backup(&v);
    Ok(ValueFunctions { v, q })
}

/// Discounted state-visitation distribution `(1−γ) ρᵀ (I − γP^π)^{-1}`.
pub fn visitation(mdp: &Mdp, policy: &Policy) -> Result<DVector<f64>> {
    let a = mdp.resolvent_system(policy)?;
    let x = a
        .transpose()
        .lu()
        .solve(mdp.rho())
        .ok_or_else(|| Error::Numeric("singular visitation system".into()))?;
    Ok(x * (1.0 - mdp.gamma))
}

/// Greedy distribution over one action-value row; ties split uniformly.
pub fn greedy_row(q: &[f64]) -> Result<Vec<f64>> {
    if q.is_empty() {
        return Err(invalid("empty action-value row"));
    }
    if q.iter().any(|x| x.is_nan()) {
        return Err(invalid("NaN in action-value row"));
    }
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<bool> = q.iter().map(|&x| x >= max - GREEDY_TIE_TOL).collect();
    let count = ties.iter().filter(|&&t| t).count() as f64;
    Ok(ties.into_iter().map(|t| if t { 1.0 / count } else { 0.0 }).collect())
}

/// Row-wise greedy policy for an `|S| × |A|` action-value matrix.
pub fn greedy(q: &DMatrix<f64>) -> Result<Policy> {
    let mut probs = DMatrix::zeros(q.nrows(), q.ncols());
    for s in 0..q.nrows() {
        let row: Vec<f64> = q.row(s).iter().copied().collect();
        for (a, p) in greedy_row(&row)?.into_iter().enumerate() {
            probs[(s, a)] = p;
        }
    }
    Ok(Policy { probs })
}

/// Gradient of `V_ρ^π` with respect to the direct policy representation:
/// row `s` is `d_ρ^π(s) Q^π(s, ·) / (1 − γ)`.
pub fn functional_gradient(mdp: &Mdp, policy: &Policy) -> Result<DMatrix<f64>> {
    let vf = evaluate(mdp, policy)?;
    let d = visitation(mdp, policy)?;
    let scale = 1.0 / (1.0 - mdp.gamma);
    Ok(DMatrix::from_fn(mdp.num_states, mdp.num_actions, |s, a| {
        scale * d[s] * vf.q[(s, a)]
    }))
}

/// Right-hand side of the performance-difference identity,
/// `1/(1−γ) E_{s∼d^{new}}⟨Q^{old}_s, π^{new}_s − π^{old}_s⟩`.
pub fn pdl_gap(mdp: &Mdp, pi_new: &Policy, pi_old: &Policy) -> Result<f64> {
    let old = evaluate(mdp, pi_old)?;
    let d_new = visitation(mdp, pi_new)?;
    let mut total = 0.0;
    for s in 0..mdp.num_states {
        let inner: f64 = (0..mdp.num_actions)
            .map(|a| old.q[(s, a)] * (pi_new.probs[(s, a)] - pi_old.probs[(s, a)]))
            .sum();
        total += d_new[s] * inner;
    }
    Ok(total / (1.0 - mdp.gamma))
}

#[derive(Debug, Clone)]
pub struct OptimalSolution {
    pub policy: Policy,
    pub values: ValueFunctions,
    pub iterations: usize,
}

/// Policy iteration run to a fixed point.
pub fn solve_optimal(mdp: &Mdp) -> Result<OptimalSolution> {
    let mut policy = Policy::uniform(mdp.num_states, mdp.num_actions);
    let mut values = evaluate(mdp, &policy)?;
    for it in 1..=10_000 {
        let next = greedy(&values.q)?;
        let next_values = evaluate(mdp, &next)?;
        let improved = next_values
            .v
            .iter()
            .zip(values.v.iter())
            .any(|(n, o)| n - o > 1e-12 * (1.0 + o.abs()));
        policy = next;
        values = next_values;
        if !improved {
            return Ok(OptimalSolution { policy, values, iterations: it });
        }
    }
    Err(Error::Numeric("policy iteration did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_state(r: f64, gamma: f64) -> Mdp {
        Mdp::from_nested(&[vec![vec![1.0]]], &[vec![r]], gamma, &[1.0]).unwrap()
    }

    #[test]
    fn geometric_series_value() {
        let mdp = one_state(1.0, 0.9);
        let vf = evaluate(&mdp, &Policy::uniform(1, 1)).unwrap();
        assert!((vf.v[0] - 10.0).abs() < 1e-12);
        assert!((vf.q[(0, 0)] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_gives_zero_values() {
        let p = vec![
            vec![vec![0.3, 0.7], vec![1.0, 0.0]],
            vec![vec![0.5, 0.5], vec![0.0, 1.0]],
        ];
        let mdp = Mdp::from_nested(&p, &[vec![0.0, 0.0], vec![0.0, 0.0]], 0.8, &[0.5, 0.5]).unwrap();
        let vf = evaluate(&mdp, &Policy::uniform(2, 2)).unwrap();
        assert!(vf.v.iter().chain(vf.q.iter()).all(|x| x.abs() < 1e-15));
        let g = functional_gradient(&mdp, &Policy::uniform(2, 2)).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn self_loop_visitation_is_rho() {
        let p = vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]];
        let mdp = Mdp::from_nested(&p, &[vec![1.0], vec![0.0]], 0.9, &[0.5, 0.5]).unwrap();
        let d = visitation(&mdp, &Policy::uniform(2, 1)).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-12 && (d[1] - 0.5).abs() < 1e-12);
        let d1 = visitation(&one_state(1.0, 0.5), &Policy::uniform(1, 1)).unwrap();
        assert!((d1[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(greedy_row(&[1.0, 2.0, 0.5]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(greedy_row(&[3.0, 3.0]).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(greedy_row(&[1.0, f64::NAN]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn single_state_gradient_is_reward() {
        let mdp = Mdp::from_nested(&[vec![vec![1.0], vec![1.0]]], &[vec![1.0, 0.0]], 0.0, &[1.0]).unwrap();
        let g = functional_gradient(&mdp, &Policy::uniform(1, 2)).unwrap();
        assert!((g[(0, 0)] - 1.0).abs() < 1e-15 && g[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Mdp::from_nested(&[vec![vec![0.5]]], &[vec![0.0]], 0.9, &[1.0]).is_err());
        assert!(Mdp::from_nested(&[vec![vec![1.0]]], &[vec![0.0]], 1.0, &[1.0]).is_err());
        assert!(Mdp::from_nested(&[vec![vec![1.0]]], &[vec![0.0]], 0.5, &[0.9]).is_err());
        let mdp = one_state(1.0, 0.5);
        assert!(matches!(
            evaluate(&mdp, &Policy::uniform(2, 1)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(Policy::from_rows(&[vec![0.6, 0.6]]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = vec![
            vec![vec![0.3, 0.7], vec![1.0, 0.0]],
            vec![vec![0.5, 0.5], vec![0.0, 1.0]],
        ];
        let mdp = Mdp::from_nested(&p, &[vec![0.1, 0.2], vec![0.3, 0.4]], 0.8, &[0.25, 0.75]).unwrap();
        let back = Mdp::from_json_str(&mdp.to_json_string()).unwrap();
        assert_eq!(mdp, back);
    }

    #[test]
    fn pdl_is_zero_for_identical_policies() {
        let mdp = one_state(1.0, 0.5);
        let pi = Policy::uniform(1, 1);
        assert_eq!(pdl_gap(&mdp, &pi, &pi).unwrap(), 0.0);
    }
}
