mod common;

use common::*;
use gradcritic::lstd::{population_fixed_point, PopulationModel};
use gradcritic::online::*;
use gradcritic::{rng, Error, FeatureMap, Policy};

fn cfg(lambda: f64, actor_lr: f64, steps: usize) -> TdrcConfig {
    TdrcConfig {
        lambda,
        alpha: 0.05,
        alpha_gamma: None,
        beta_reg: 1.0,
        actor_lr,
        actor_optimizer: ActorOptimizer::Sgd,
        total_steps: steps,
        eval_every: 100,
        episode_len: Some(20),
        sampling: Sampling::Stream,
    }
}

#[test]
fn expected_updates_vanish_at_population_fixed_point() {
    let mdp = small_mdp(20, 4, 2, 0.9);
    let beh = Policy::tabular_uniform(4, 2);
    let pol = random_tabular(20, 4, 2);
    let f = FeatureMap::random(&mdp, 5, &mut rng::stream(20, 1));
    let sol = population_fixed_point(&mdp, &beh, &pol, &f, &f).unwrap();
    let model = PopulationModel::new(&mdp, &beh, &pol).unwrap();

    let mut value = TdrcValueState::new(5, 0.1, 1.0);
    value.omega = sol.omega.clone();
    let (dw, dc) = expected_value_update(&model, &f, &value);
    assert!(dw.amax() < 1e-10 && dc.amax() < 1e-10);

    let mut grad = TdrcGammaState::new(5, 8, 0.1, 1.0);
    grad.g_matrix = sol.g_matrix.clone();
    let (dg, dh) = expected_gamma_update(&model, &f, &sol.q_table(&f), &grad);
    assert!(dg.amax() < 1e-10 && dh.amax() < 1e-10);
}

#[test]
fn iterating_expected_updates_reaches_fixed_point() {
    let mdp = small_mdp(21, 3, 2, 0.8);
    let beh = Policy::tabular_uniform(3, 2);
    let pol = random_tabular(21, 3, 2);
    let f = FeatureMap::one_hot(&mdp);
    let sol = population_fixed_point(&mdp, &beh, &pol, &f, &f).unwrap();
    let model = PopulationModel::new(&mdp, &beh, &pol).unwrap();
    let mut value = TdrcValueState::new(6, 1.0, 1.0);
    for _ in 0..20_000 {
        let (dw, dc) = expected_value_update(&model, &f, &value);
        value.omega += dw;
        value.chi += dc;
    }
    assert!((&value.omega - &sol.omega).amax() < 1e-8);
    let q = sol.q_table(&f);
    let mut grad = TdrcGammaState::new(6, 6, 1.0, 1.0);
    for _ in 0..20_000 {
        let (dg, dh) = expected_gamma_update(&model, &f, &q, &grad);
        grad.g_matrix += dg;
        grad.h_matrix += dh;
    }
    assert!((&grad.g_matrix - &sol.g_matrix).amax() < 1e-8);
}

#[test]
fn sampled_critics_approach_fixed_point() {
    let mdp = small_mdp(22, 3, 2, 0.8);
    let beh = Policy::tabular_uniform(3, 2);
    let pol = random_tabular(22, 3, 2);
    let f = FeatureMap::one_hot(&mdp);
    let sol = population_fixed_point(&mdp, &beh, &pol, &f, &f).unwrap();
    let run = train_critics(&mdp, &beh, &pol, &f, 0.01, 1.0, 200_000, Sampling::Iid, &mut rng::stream(22, 5)).unwrap();
    let rel = |a: f64, b: f64| a / b.max(1e-12);
    assert!(rel((&run.omega_average - &sol.omega).norm(), sol.omega.norm()) < 0.05);
    assert!(rel((&run.g_average - &sol.g_matrix).norm(), sol.g_matrix.norm()) < 0.1);
}

#[test]
fn frozen_actor_keeps_policy_and_return() {
    let mdp = small_mdp(23, 4, 2, 0.9);
    let beh = Policy::tabular_uniform(4, 2);
    let pol = random_tabular(23, 4, 2);
    let f = FeatureMap::one_hot(&mdp);
    let out = tdrc_gamma_train(&mdp, &beh, &pol, &f, &cfg(0.5, 0.0, 1000), Recording::default(), &mut rng::stream(23, 0)).unwrap();
    assert_eq!(out.policy.theta, pol.theta);
    assert_eq!(out.curve.len(), 11);
    assert!(out.curve.iter().all(|c| c.ret == out.curve[0].ret));
}

#[test]
fn full_trace_matches_critic_free_actor() {
    let mdp = small_mdp(24, 5, 2, 0.9);
    let beh = Policy::tabular_uniform(5, 2);
    let pol = random_mlp(24, 5, 3, 2);
    let f = FeatureMap::one_hot(&mdp);
    let c = cfg(1.0, 0.01, 3000);
    let a = tdrc_gamma_train(&mdp, &beh, &pol, &f, &c, Recording::default(), &mut rng::stream(24, 0)).unwrap();
    let b = semi_gradient_train(&mdp, &beh, &pol, &f, &c, Recording::default(), &mut rng::stream(24, 0)).unwrap();
    assert_eq!(a.policy.theta, b.policy.theta);
}

#[test]
fn untracked_parameters_ignore_lambda() {
    let mdp = small_mdp(25, 5, 2, 0.9);
    let beh = Policy::tabular_uniform(5, 2);
    let pol = random_mlp(25, 5, 3, 2).with_mask(vec![]).unwrap();
    let f = FeatureMap::one_hot(&mdp);
    let a = tdrc_gamma_train(&mdp, &beh, &pol, &f, &cfg(0.3, 0.01, 2000), Recording::default(), &mut rng::stream(25, 0)).unwrap();
    let b = semi_gradient_train(&mdp, &beh, &pol, &f, &cfg(0.3, 0.01, 2000), Recording::default(), &mut rng::stream(25, 0)).unwrap();
    assert_eq!(a.policy.theta, b.policy.theta);
}

#[test]
fn myopic_trace_moves_only_on_first_step_of_episode() {
    // lambda = 0 zeroes nu after the first step of each episode
    let mdp = small_mdp(26, 4, 2, 0.9);
    let beh = Policy::tabular_uniform(4, 2);
    let pol = random_tabular(26, 4, 2);
    let f = FeatureMap::one_hot(&mdp);
    let mut c = cfg(0.0, 0.1, 40);
    c.beta_reg = 0.0;
    c.eval_every = 0;
    c.episode_len = Some(4);
    let out = tdrc_gamma_train(&mdp, &beh, &pol, &f, &c, Recording { trajectory: true }, &mut rng::stream(26, 0)).unwrap();
    let mut prev = pol.theta.clone();
    for (t, theta) in out.trajectory.iter().enumerate() {
        if t % 4 != 0 {
            assert_eq!(theta, &prev, "step {t}");
        }
        prev = theta.clone();
    }
}

#[test]
fn huge_actor_step_reports_divergence() {
    let mdp = small_mdp(27, 4, 2, 0.9);
    let beh = Policy::tabular_uniform(4, 2);
    let pol = random_tabular(27, 4, 2);
    let f = FeatureMap::one_hot(&mdp);
    let mut c = cfg(0.5, 1e12, 500);
    c.alpha = 0.5;
    let out = tdrc_gamma_train(&mdp, &beh, &pol, &f, &c, Recording::default(), &mut rng::stream(27, 0)).unwrap();
    assert!(out.divergence.is_some());
    let err = out.into_result().unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }));
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = cfg(1.5, 0.0, 1);
    assert!(c.validate().is_err());
    c.lambda = 0.5;
    c.episode_len = Some(0);
    assert!(c.validate().is_err());
    c.episode_len = None;
    c.alpha = 0.0;
    assert!(c.validate().is_err());
}

#[test]
fn seeded_runs_are_reproducible() {
    let mdp = small_mdp(28, 4, 2, 0.9);
    let beh = Policy::tabular_uniform(4, 2);
    let pol = random_mlp(28, 4, 3, 2);
    let f = FeatureMap::one_hot(&mdp);
    let run = || tdrc_gamma_train(&mdp, &beh, &pol, &f, &cfg(0.5, 0.01, 1000), Recording::default(), &mut rng::stream(28, 0)).unwrap();
    assert_eq!(run().policy.theta, run().policy.theta);
}

#[test]
fn feature_scale_is_absorbed_by_step_size_and_regularizer() {
    // Features times c, alpha / c^2 and beta * c^2 give the same value estimates.
    let mdp = small_mdp(23, 4, 2, 0.9);
    let beh = Policy::tabular_uniform(4, 2);
    let pol = random_tabular(23, 4, 2);
    let f = FeatureMap::random(&mdp, 5, &mut rng::stream(23, 1));
    let c = 3.0;
    let scaled = FeatureMap::from_matrix(&(f.matrix() * c), 2).unwrap();
    let model = PopulationModel::new(&mdp, &beh, &pol).unwrap();
    let mut a = TdrcValueState::new(5, 0.1, 1.0);
    let mut b = TdrcValueState::new(5, 0.1 / (c * c), c * c);
    for _ in 0..500 {
        let (dw, dc) = expected_value_update(&model, &f, &a);
        a.omega += dw;
        a.chi += dc;
        let (dw, dc) = expected_value_update(&model, &scaled, &b);
        b.omega += dw;
        b.chi += dc;
        let va = f.matrix() * &a.omega;
        let vb = scaled.matrix() * &b.omega;
        assert!((va - vb).amax() < 1e-10);
    }
}
