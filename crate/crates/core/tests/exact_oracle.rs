mod common;

use common::*;
use gradcritic::oracle::*;
use gradcritic::{rng, FeatureMap, FiniteMdp, Policy};
use nalgebra::{DMatrix, DVector};

fn bandit(gamma: f64, r: [f64; 2]) -> FiniteMdp {
    FiniteMdp::new(gamma, vec![1.0], vec![vec![vec![1.0], vec![1.0]]], vec![r.to_vec()]).unwrap()
}

/// Two states; action `a` moves to state `a`.
fn steering_chain() -> FiniteMdp {
    FiniteMdp::new(
        0.9,
        vec![0.5, 0.5],
        vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 2],
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    )
    .unwrap()
}

fn rollout_return(mdp: &FiniteMdp, pol: &Policy, s0: usize, a0: usize, horizon: usize, r: &mut rng::Rng) -> f64 {
    let (mut s, mut a) = (s0, a0);
    let mut g = 0.0;
    let mut disc = 1.0;
    for _ in 0..horizon {
        let (sn, rew) = mdp.step(s, a, r);
        g += disc * rew;
        disc *= mdp.gamma;
        s = sn;
        a = pol.sample_action(mdp.observe(s), r);
    }
    g
}

#[test]
fn geometric_value_and_return() {
    let mdp = FiniteMdp::new(0.5, vec![1.0], vec![vec![vec![1.0]]], vec![vec![1.0]]).unwrap();
    let pol = Policy::tabular_uniform(1, 1);
    assert!((q_values(&mdp, &pol).unwrap()[0] - 2.0).abs() < 1e-14);
    assert!((return_j(&mdp, &pol).unwrap() - 1.0).abs() < 1e-14);
}

#[test]
fn myopic_values_are_rewards() {
    let mdp = small_mdp(1, 4, 2, 0.0);
    let pol = random_tabular(1, 4, 2);
    let q = q_values(&mdp, &pol).unwrap();
    assert!(q.iter().zip(mdp.reward_vector()).all(|(a, b)| (a - b).abs() < 1e-14));
    let pi = action_probs(&mdp, &pol);
    let expect: f64 = (0..mdp.n_sa()).map(|i| mdp.mu0[i / 2] * pi[i] * mdp.reward_vector()[i]).sum();
    assert!((return_j(&mdp, &pol).unwrap() - expect).abs() < 1e-14);
}

#[test]
fn action_values_match_monte_carlo() {
    let mdp = small_mdp(2, 5, 2, 0.9);
    let pol = random_tabular(2, 5, 2);
    let q = q_values(&mdp, &pol).unwrap();
    let mut r = rng::stream(2, 5);
    for (s, a) in [(0, 1), (3, 0)] {
        let g: Vec<f64> = (0..100_000).map(|_| rollout_return(&mdp, &pol, s, a, 200, &mut r)).collect();
        let (m, se) = mean_and_se(&g);
        assert!((m - q[mdp.sa(s, a)]).abs() < 3.0 * se, "q {} mc {m} se {se}", q[mdp.sa(s, a)]);
    }
}

#[test]
fn return_matches_monte_carlo() {
    let mdp = small_mdp(3, 5, 2, 0.9);
    let pol = random_tabular(3, 5, 2);
    let mut r = rng::stream(3, 5);
    let g: Vec<f64> = (0..100_000)
        .map(|_| {
            let s = mdp.sample_start(&mut r);
            let a = pol.sample_action(mdp.observe(s), &mut r);
            (1.0 - mdp.gamma) * rollout_return(&mdp, &pol, s, a, 200, &mut r)
        })
        .collect();
    let (m, se) = mean_and_se(&g);
    assert!((m - return_j(&mdp, &pol).unwrap()).abs() < 3.0 * se);
}

#[test]
fn discounted_distribution_examples() {
    let mdp = small_mdp(4, 4, 2, 0.0);
    let pol = random_tabular(4, 4, 2);
    let b = discounted_distributions(&mdp, &pol).unwrap();
    assert!(b.mu_gamma.iter().zip(&mdp.mu0).all(|(a, c)| (a - c).abs() < 1e-14));

    let cyc = cycle(0.5);
    let b = discounted_distributions(&cyc, &Policy::tabular_uniform(2, 1)).unwrap();
    assert!((b.mu_gamma[0] - 2.0 / 3.0).abs() < 1e-14);
    assert!((b.mu_gamma[1] - 1.0 / 3.0).abs() < 1e-14);
    for v in [&b.mu_t_limit, &b.mu_gamma, &b.d_sa] {
        assert!((v.sum() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn discounted_distribution_matches_restart_sampling() {
    let mdp = small_mdp(5, 6, 2, 0.8);
    let pol = random_tabular(5, 6, 2);
    let exact = discounted_distributions(&mdp, &pol).unwrap().mu_gamma;
    let mut r = rng::stream(5, 9);
    let mut counts = vec![0.0; 6];
    let mut s = mdp.sample_start(&mut r);
    let n = 1_000_000;
    for _ in 0..n {
        counts[s] += 1.0 / n as f64;
        s = if rand::Rng::random::<f64>(&mut r) < 1.0 - mdp.gamma {
            mdp.sample_start(&mut r)
        } else {
            let a = pol.sample_action(mdp.observe(s), &mut r);
            mdp.step(s, a, &mut r).0
        };
    }
    assert!(total_variation(&counts, exact.as_slice()) < 1e-2);
}

#[test]
fn symmetric_bandit_has_zero_gradient() {
    let mdp = bandit(0.5, [1.0, 1.0]);
    let g = true_policy_gradient(&mdp, &Policy::tabular(1, 2, vec![0.3, -0.7]).unwrap()).unwrap();
    assert!(g.amax() < 1e-14);
}

#[test]
fn start_state_form_equals_gradient() {
    for seed in 0..5 {
        let mdp = small_mdp(seed, 5, 3, 0.9);
        let pol = random_tabular(seed, 5, 3);
        let q = q_values(&mdp, &pol).unwrap();
        let gam = true_gamma(&mdp, &pol).unwrap();
        let lhs = true_policy_gradient(&mdp, &pol).unwrap();
        let rhs = start_state_form(&mdp, &pol, &q, &gam);
        assert!((lhs - rhs).amax() < 1e-10);
    }
}

#[test]
fn gradient_critic_vanishes_without_discount() {
    let mdp = small_mdp(6, 4, 2, 0.0);
    assert_eq!(true_gamma(&mdp, &random_tabular(6, 4, 2)).unwrap().amax(), 0.0);
}

#[test]
fn gradient_critic_matches_unrolled_series() {
    let mdp = small_mdp(7, 5, 2, 0.9);
    let pol = random_mlp(7, 5, 3, 2);
    let closed = true_gamma(&mdp, &pol).unwrap();
    let unrolled = unrolled_gamma(&mdp, &pol, 1e-12).unwrap();
    assert!((closed - unrolled).amax() < 1e-9);
}

#[test]
fn n_step_examples() {
    let mdp = small_mdp(8, 5, 2, 0.9);
    let pol = random_tabular(8, 5, 2);
    let q = q_values(&mdp, &pol).unwrap();
    let gam = true_gamma(&mdp, &pol).unwrap();
    let one = n_step_gradient(&mdp, &pol, 1).unwrap();
    assert!((&one - start_state_form(&mdp, &pol, &q, &gam)).amax() < 1e-10);
    let truth = true_policy_gradient(&mdp, &pol).unwrap();
    for n in [1, 2, 5] {
        assert!((n_step_gradient(&mdp, &pol, n).unwrap() - &truth).amax() < 1e-9);
    }
    assert!(n_step_gradient(&mdp, &pol, 0).is_err());

    let myopic = small_mdp(8, 5, 2, 0.0);
    let q0 = q_values(&myopic, &pol).unwrap();
    let pi = action_probs(&myopic, &pol);
    let mut expect = DVector::zeros(pol.n_params());
    for s in 0..5 {
        for a in 0..2 {
            let i = myopic.sa(s, a);
            expect += pol.score(s, a) * (myopic.mu0[s] * pi[i] * q0[i]);
        }
    }
    assert!((n_step_gradient(&myopic, &pol, 3).unwrap() - expect).amax() < 1e-12);
}

#[test]
fn kappa_examples() {
    let mdp = steering_chain();
    let target = Policy::tabular_from_probs(2, &[0.8, 0.2]).unwrap();
    let uniform = Policy::tabular_uniform(2, 2);
    assert!((kappa(&mdp, &target, &target).unwrap() - 1.0).abs() < 1e-12);
    // d_target = (.64, .16, .16, .04), d_behavior = .25 each, so h = (1.6, .8, .8, .4)
    assert!((kappa(&mdp, &target, &uniform).unwrap() - 4.0).abs() < 1e-10);
    for seed in 0..5 {
        let m = small_mdp(seed, 4, 2, 0.9);
        assert!(kappa(&m, &random_tabular(seed, 4, 2), &uniform_for(&m)).unwrap() >= 1.0);
    }
}

fn uniform_for(mdp: &FiniteMdp) -> Policy {
    Policy::tabular_uniform(mdp.n_states, mdp.n_actions)
}

#[test]
fn zero_support_behavior_is_rejected() {
    let mdp = steering_chain();
    let target = Policy::tabular_uniform(2, 2);
    let blind = Policy::tabular(2, 2, vec![0.0, -1e4, 0.0, -1e4]).unwrap();
    assert!(kappa(&mdp, &target, &blind).is_err());
}

#[test]
fn projection_examples() {
    let mdp = small_mdp(9, 3, 2, 0.9);
    let d = DVector::from_vec(vec![0.1, 0.2, 0.1, 0.3, 0.2, 0.1]);
    let target = DMatrix::from_fn(6, 2, |i, j| (i * 3 + j) as f64 * 0.1 - 0.4);
    let (p, e) = weighted_projection(&FeatureMap::one_hot(&mdp), &d, &target).unwrap();
    assert!((p - &target).amax() < 1e-12 && e < 1e-12);

    let f = FeatureMap::random(&mdp, 3, &mut rng::stream(9, 0));
    let in_span = f.matrix() * DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0]);
    let (_, e) = weighted_projection(&f, &d, &in_span).unwrap();
    assert!(e < 1e-10);
}

#[test]
fn rank_one_projection_matches_normal_equations() {
    let f = FeatureMap::from_matrix(&DMatrix::from_column_slice(2, 1, &[1.0, 3.0]), 1).unwrap();
    let d = DVector::from_vec(vec![0.25, 0.75]);
    let y = DMatrix::from_column_slice(2, 1, &[2.0, -1.0]);
    let c = (0.25 * 1.0 * 2.0 + 0.75 * 3.0 * -1.0) / (0.25 * 1.0 + 0.75 * 9.0);
    let (p, e) = weighted_projection(&f, &d, &y).unwrap();
    assert!((p[(0, 0)] - c).abs() < 1e-14 && (p[(1, 0)] - 3.0 * c).abs() < 1e-14);
    let expect_err = (0.25 * (c - 2.0f64).powi(2) + 0.75 * (3.0 * c + 1.0f64).powi(2)).sqrt();
    assert!((e - expect_err).abs() < 1e-14);
}

#[test]
fn on_policy_one_hot_bounds_are_tight() {
    let mdp = small_mdp(10, 4, 2, 0.9);
    let pol = random_tabular(10, 4, 2);
    let f = FeatureMap::one_hot(&mdp);
    let rep = bound_report(&mdp, &pol, &pol, &f, &f).unwrap();
    assert!(rep.lhs_true_q < 1e-9 && rep.lhs_td < 1e-9);
    assert!(rep.true_q_holds && rep.td_holds && rep.on_policy);
    assert!((rep.kappa - kappa(&mdp, &pol, &pol).unwrap()).abs() < 1e-12);
    assert_eq!(rep.b, pol.score_infinity_bound(&mdp));
    assert_eq!(rep.n_params, 8);
}
