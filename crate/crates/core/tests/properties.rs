use pmd_core::approx::{main_surrogate, Objective, ParametricPolicy, SurrogateContext};
use pmd_core::generators::{generate_random_mdp, RandomMdpSpec};
use pmd_core::mirror::{euclidean_simplex_projection, neg_entropy_bregman, prox_step, Euclidean, MirrorMap, NegEntropy};
use pmd_core::{greedy, Policy, UpdateKind};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.02f64..1.0, n).prop_map(|w| {
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    })
}

fn on_simplex(p: &[f64]) -> bool {
    p.iter().all(|x| *x >= 0.0 && x.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-12
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn prox_stays_on_simplex(
        (pi, q) in (2usize..7).prop_flat_map(|n| (simplex(n), prop::collection::vec(-50.0f64..50.0, n))),
        eta in 1e-6f64..1e6,
    ) {
        prop_assert!(on_simplex(&prox_step(&q, &pi, eta, &NegEntropy).unwrap()));
        prop_assert!(on_simplex(&prox_step(&q, &pi, eta, &Euclidean).unwrap()));
    }

    #[test]
    fn bregman_is_nonnegative_and_zero_on_diagonal(
        (p, q) in (2usize..7).prop_flat_map(|n| (simplex(n), simplex(n))),
    ) {
        prop_assert!(neg_entropy_bregman(&p, &q).unwrap() >= -1e-15);
        prop_assert!(neg_entropy_bregman(&p, &p).unwrap().abs() < 1e-12);
        prop_assert!(Euclidean.bregman(&p, &q) >= 0.0);
    }

    #[test]
    fn three_point_identity(
        (x, y, z) in (2usize..6).prop_flat_map(|n| (simplex(n), simplex(n), simplex(n))),
    ) {
        // D(x,z) = D(x,y) + D(y,z) + ⟨∇h(y) − ∇h(z), x − y⟩
        let h = NegEntropy;
        let (gy, gz) = (h.grad(&y), h.grad(&z));
        let diff: Vec<f64> = gy.iter().zip(&gz).map(|(a, b)| a - b).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let rhs = h.bregman(&x, &y) + h.bregman(&y, &z) + dot(&diff, &xy);
        prop_assert!((h.bregman(&x, &z) - rhs).abs() < 1e-9);
    }

    #[test]
    fn euclidean_projection_is_closest_point(
        y in prop::collection::vec(-3.0f64..3.0, 2..7),
        seed in any::<u64>(),
    ) {
        let p = euclidean_simplex_projection(&y);
        prop_assert!(on_simplex(&p));
        let d = |a: &[f64]| a.iter().zip(&y).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
        // compare against a few vertices and a pseudo-random point
        let n = y.len();
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            prop_assert!(d(&p) <= d(&e) + 1e-12);
        }
        let w: Vec<f64> = (0..n).map(|i| ((seed >> (i * 7)) & 127) as f64 + 1.0).collect();
        let z: f64 = w.iter().sum();
        let r: Vec<f64> = w.into_iter().map(|x| x / z).collect();
        prop_assert!(d(&p) <= d(&r) + 1e-12);
    }

    #[test]
    fn greedy_commutes_with_action_permutation(
        q in prop::collection::vec(-5.0f64..5.0, 3..7),
        shift in 0usize..6,
    ) {
        let n = q.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let qp: Vec<f64> = perm.iter().map(|&i| q[i]).collect();
        let g = greedy(&DMatrix::from_row_slice(1, n, &q)).unwrap();
        let gp = greedy(&DMatrix::from_row_slice(1, n, &qp)).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert_eq!(gp.probs()[(0, j)], g.probs()[(0, i)]);
        }
    }

    #[test]
    fn logit_shift_leaves_policy_and_loss_unchanged(
        theta in prop::collection::vec(-4.0f64..4.0, 6),
        shift in prop::collection::vec(-100.0f64..100.0, 2),
        q in prop::collection::vec(-2.0f64..2.0, 6),
    ) {
        let t = DMatrix::from_row_slice(2, 3, &theta);
        let shifted = DMatrix::from_fn(2, 3, |s, a| t[(s, a)] + shift[s]);
        let p = ParametricPolicy::new(t.clone()).unwrap().policy();
        let ps = ParametricPolicy::new(shifted.clone()).unwrap().policy();
        prop_assert!(p.total_variation(&ps) < 1e-12);
        let ctx = SurrogateContext {
            weights: vec![0.3, 0.7],
            pi: Some(Policy::uniform(2, 3)),
            q_hat: Some(DMatrix::from_row_slice(2, 3, &q)),
            eta: Some(vec![0.7, 2.0]),
            ..Default::default()
        };
        let obj = main_surrogate(UpdateKind::Pmd, &ctx).unwrap();
        prop_assert!((obj.loss(&t) - obj.loss(&shifted)).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn generated_mdps_are_valid(
        ns in 1usize..12,
        na in 1usize..5,
        b_frac in 0.0f64..1.0,
        gamma in 0.0f64..0.999,
        r_max in 0.0f64..5.0,
        seed in any::<u64>(),
    ) {
        let branching = 1 + ((ns - 1) as f64 * b_frac) as usize;
        let spec = RandomMdpSpec { num_states: ns, num_actions: na, branching, gamma, r_max, seed };
        let mdp = generate_random_mdp(&spec).unwrap();
        let p = mdp.transition();
        for row in 0..ns * na {
            let r = p.row(row);
            prop_assert!((r.sum() - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|x| *x >= 0.0));
            prop_assert!(r.iter().filter(|x| **x > 0.0).count() <= branching);
        }
        prop_assert!(mdp.reward().iter().all(|r| (0.0..=r_max).contains(r)));
        prop_assert!((mdp.rho().sum() - 1.0).abs() < 1e-12);
        let again = generate_random_mdp(&spec).unwrap();
        prop_assert_eq!(again.transition(), p);
    }
}
