#![allow(dead_code)]

use nalgebra::DMatrix;
use pmd_core::generators::{generate_random_mdp, RandomMdpSpec};
use pmd_core::{Mdp, Policy};
use rand::Rng;

pub fn random_mdp(num_states: usize, num_actions: usize, branching: usize, gamma: f64, seed: u64) -> Mdp {
    generate_random_mdp(&RandomMdpSpec {
        num_states,
        num_actions,
        branching,
        gamma,
        r_max: 1.0,
        seed,
    })
    .unwrap()
}

/// Interior policy with rows drawn from normalized U(0.05, 1) weights.
pub fn random_policy<R: Rng>(ns: usize, na: usize, rng: &mut R) -> Policy {
    let rows: Vec<Vec<f64>> = (0..ns)
        .map(|_| {
            let w: Vec<f64> = (0..na).map(|_| rng.random_range(0.05..1.0)).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect()
        })
        .collect();
    Policy::from_rows(&rows).unwrap()
}

pub fn random_simplex<R: Rng>(na: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..na).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

pub fn random_matrix<R: Rng>(ns: usize, na: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(ns, na, |_, _| rng.random_range(-scale..scale))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
