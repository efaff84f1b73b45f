//! Conditioning and geometry metrics: successor representation, condition
//! numbers, policy entropy, regret and value-polytope sampling.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{evaluate, solve_optimal, Mdp, Policy};

/// Eigenvalue moduli below this make the condition number infinite.
pub const SINGULAR_EIG_TOL: f64 = 1e-14;

/// `Ψ^π = (I − γP^π)^{-1}`.
pub fn successor_matrix(mdp: &Mdp, policy: &Policy) -> Result<DMatrix<f64>> {
    let a = mdp.resolvent_system(policy)?;
    a.clone().try_inverse().ok_or_else(|| {
        let diag_min = a.diagonal().iter().copied().fold(f64::INFINITY, f64::min);
        Error::Numeric(format!(
            "I - gamma P^pi is singular (gamma = {}, min diagonal {diag_min})",
            mdp.gamma()
        ))
    })
}

fn eigen_moduli(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(invalid(format!("expected a non-empty square matrix, got {:?}", m.shape())));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    Ok(m.complex_eigenvalues().iter().map(|z| z.norm()).collect())
}

/// `|λ|_max / |λ|_min` over the (possibly complex) spectrum.
pub fn condition_number(psi: &DMatrix<f64>) -> Result<f64> {
    let moduli = eigen_moduli(psi)?;
    let max = moduli.iter().copied().fold(0.0, f64::max);
    let min = moduli.iter().copied().fold(f64::INFINITY, f64::min);
    if min < SINGULAR_EIG_TOL {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigen_moduli(m)?.into_iter().fold(0.0, f64::max))
}

/// Mean over states of `−Σ_a π log π`.
pub fn policy_entropy(policy: &Policy) -> f64 {
    let total: f64 = policy
        .probs()
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    total / policy.num_states() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditioningReport {
    pub kappa: f64,
    pub spectral_radius: f64,
    pub entropy: f64,
}

pub fn conditioning(mdp: &Mdp, policy: &Policy) -> Result<ConditioningReport> {
    let psi = successor_matrix(mdp, policy)?;
    Ok(ConditioningReport {
        kappa: condition_number(&psi)?,
        spectral_radius: spectral_radius(&psi)?,
        entropy: policy_entropy(policy),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regret {
    /// `V*_ρ − V^t_ρ` per recorded iterate.
    pub gaps: Vec<f64>,
    /// Running sums of `gaps`.
    pub cumulative: Vec<f64>,
}

impl Regret {
    pub fn final_gap(&self) -> f64 {
        self.gaps.last().copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

pub fn regret(v_rho: &[f64], v_star: f64) -> Regret {
    let gaps: Vec<f64> = v_rho.iter().map(|v| v_star - v).collect();
    let cumulative = gaps
        .iter()
        .scan(0.0, |acc, g| {
            *acc += g;
            Some(*acc)
        })
        .collect();
    Regret { gaps, cumulative }
}

/// Regret against the optimum found by policy iteration.
pub fn regret_for(mdp: &Mdp, v_rho: &[f64]) -> Result<Regret> {
    let opt = solve_optimal(mdp)?;
    Ok(regret(v_rho, opt.values.v_rho(mdp.rho())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeSample {
    pub points: Vec<[f64; 2]>,
    pub corners: Vec<[f64; 2]>,
    /// Action chosen in each state by the deterministic policy behind each corner.
    pub corner_actions: Vec<[usize; 2]>,
}

impl PolytopeSample {
    /// `(min, max)` corners of the axis-aligned box around all points.
    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in self.points.iter().chain(&self.corners) {
            for i in 0..2 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        (lo, hi)
    }
}

/// Grid points per simplex edge used when no resolution is given.
pub fn default_resolution(num_actions: usize) -> usize {
    if num_actions <= 2 {
        51
    } else {
        16
    }
}

/// All points of the simplex lattice with `divisions` steps per edge.
pub fn simplex_lattice(num_actions: usize, divisions: usize) -> Vec<Vec<f64>> {
    fn rec(left: usize, slots: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for i in (0..=left).rev() {
            prefix.push(i);
            rec(left - i, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut counts = Vec::new();
    rec(divisions, num_actions, &mut Vec::new(), &mut counts);
    counts
        .into_iter()
        .map(|c| c.into_iter().map(|x| x as f64 / divisions as f64).collect())
        .collect()
}

/// Values of policies on a per-state simplex grid of a two-state MDP, plus
/// the values of all deterministic policies. `resolution` is the number of
/// grid points per simplex edge.
pub fn sample_polytope(mdp: &Mdp, resolution: usize) -> Result<PolytopeSample> {
    if mdp.num_states() != 2 {
        return Err(invalid(format!(
            "value polytope sampling needs exactly 2 states, got {}",
            mdp.num_states()
        )));
    }
    if resolution < 2 {
        return Err(invalid("polytope resolution must be at least 2"));
    }
    let na = mdp.num_actions();
    let lattice = simplex_lattice(na, resolution - 1);
    let mut points = Vec::with_capacity(lattice.len() * lattice.len());
    for r0 in &lattice {
        for r1 in &lattice {
            let v = evaluate(mdp, &Policy::from_rows(&[r0.clone(), r1.clone()])?)?.v;
            points.push([v[0], v[1]]);
        }
    }
    let mut corners = Vec::with_capacity(na * na);
    let mut corner_actions = Vec::with_capacity(na * na);
    for a0 in 0..na {
        for a1 in 0..na {
            let v = evaluate(mdp, &Policy::deterministic(&[a0, a1], na))?.v;
            corners.push([v[0], v[1]]);
            corner_actions.push([a0, a1]);
        }
    }
    Ok(PolytopeSample {
        points,
        corners,
        corner_actions,
    })
}
