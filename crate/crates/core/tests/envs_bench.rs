use gradcritic::envs::*;
use gradcritic::oracle::{discounted_distributions, q_values, return_j, true_policy_gradient};
use gradcritic::rng;

#[test]
fn aliasing_benchmark_values_by_hand() {
    let env = imani_default();
    let q = q_values(&env.mdp, &env.init_policy).unwrap();
    // S1 and S2 both act (0.9, 0.1); S0 acts the same way
    let v1 = 0.9 * 2.0;
    let v2 = 0.1 * 1.0;
    let expect = [0.9 * v1, 0.9 * v2, 2.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    for (i, e) in expect.iter().enumerate() {
        assert!((q[i] - e).abs() < 1e-12, "q[{i}] = {}", q[i]);
    }
    let j = return_j(&env.mdp, &env.init_policy).unwrap();
    assert!((j - 0.1 * (0.9 * expect[0] + 0.1 * expect[1])).abs() < 1e-12);
}

#[test]
fn aliasing_benchmark_layout() {
    let env = imani_default();
    assert!(env.mdp.is_terminal(3));
    assert_eq!(env.mdp.observe(2), env.mdp.observe(1));
    let b = env.behavior.probs(0);
    assert!((b[0] - 0.25).abs() < 1e-12 && (b[1] - 0.75).abs() < 1e-12);
    assert_eq!(env.features.n_features, 8);
    assert_eq!(env.init_policy.n_params(), 8);
}

#[test]
fn unobserved_state_parameters_get_no_gradient() {
    let env = imani_default();
    let g = true_policy_gradient(&env.mdp, &env.init_policy).unwrap();
    // S2 is reported as S1, so its own two logits never act
    assert_eq!(g[4], 0.0);
    assert_eq!(g[5], 0.0);
    assert!(g[2] != 0.0);
}

#[test]
fn behavior_visits_every_live_pair() {
    let env = imani_default();
    let d = discounted_distributions(&env.mdp, &env.behavior).unwrap().d_sa;
    for s in (0..4).filter(|&s| !env.mdp.is_terminal(s)) {
        assert!(d[2 * s] > 0.0 && d[2 * s + 1] > 0.0, "state {s}");
    }
}

fn row_maxima(temperature: f64, seed: u64) -> Vec<f64> {
    let cfg = RandomMdpConfig { temperature, ..Default::default() };
    let mdp = random_mdp(&cfg, &mut rng::stream(seed, 0)).unwrap();
    (0..mdp.n_sa())
        .map(|i| mdp.next_dist(i / 2, i % 2).iter().copied().fold(0.0, f64::max))
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    (v[(n - 1) / 2] + v[n / 2]) / 2.0
}

#[test]
fn cold_rows_are_uniform() {
    let cfg = RandomMdpConfig { temperature: 1e-6, ..Default::default() };
    let mdp = random_mdp(&cfg, &mut rng::stream(40, 0)).unwrap();
    for i in 0..mdp.n_sa() {
        assert!(mdp.next_dist(i / 2, i % 2).iter().all(|p| (p - 1.0 / 30.0).abs() < 1e-4));
    }
}

#[test]
fn high_temperature_sparsifies_rows() {
    // 17 MDPs x 60 rows = 1020 rows per temperature
    let collect = |t: f64| (0..17).flat_map(|seed| row_maxima(t, seed)).collect::<Vec<_>>();
    assert!(median(collect(50.0)) > median(collect(10.0)));
}

#[test]
fn rewards_are_rescaled_to_unit_interval() {
    for mode in [RewardMode::PerState, RewardMode::Global] {
        let cfg = RandomMdpConfig { reward_mode: mode, ..Default::default() };
        let mdp = random_mdp(&cfg, &mut rng::stream(41, 0)).unwrap();
        let r = mdp.reward_vector();
        assert!(r.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert_eq!(r.iter().copied().fold(0.0, f64::max), 1.0);
    }
}

#[test]
fn suite_members_are_keyed_by_seed_and_index() {
    let cfg = SuiteConfig::default();
    let a = random_env(&cfg, 7, 3).unwrap();
    let b = random_env(&cfg, 7, 3).unwrap();
    assert_eq!(a.mdp, b.mdp);
    assert_eq!(a.init_policy.theta, b.init_policy.theta);
    let suite = random_suite(&cfg, 4, 7).unwrap();
    assert_eq!(suite.len(), 4);
    assert_eq!(suite[3].mdp, a.mdp);
    for i in 0..4 {
        for j in 0..i {
            assert_ne!(suite[i].mdp.next_dist(0, 0), suite[j].mdp.next_dist(0, 0));
        }
    }
    assert_ne!(random_env(&cfg, 8, 3).unwrap().mdp, a.mdp);
}

#[test]
fn suite_policies_respect_init_scale() {
    let cfg = SuiteConfig { init_scale: 0.2, ..Default::default() };
    let env = random_env(&cfg, 1, 0).unwrap();
    assert_eq!(env.init_policy.n_params(), 22);
    assert!(env.init_policy.theta.iter().all(|t| t.abs() <= 0.2));
    assert_eq!(env.behavior.probs(5), vec![0.5, 0.5]);
}

#[test]
fn tiny_random_mdp_is_rejected() {
    let cfg = RandomMdpConfig { n_states: 1, ..Default::default() };
    assert!(random_mdp(&cfg, &mut rng::stream(0, 0)).is_err());
}
