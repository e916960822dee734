#![allow(dead_code)]

use gradcritic::envs::{random_mdp, RandomMdpConfig};
use gradcritic::{rng, FiniteMdp, Policy};
use rand::Rng;

/// Small dense MDP with moderately peaked rows.
pub fn small_mdp(seed: u64, n_states: usize, n_actions: usize, gamma: f64) -> FiniteMdp {
    let cfg = RandomMdpConfig {
        n_states,
        n_actions,
        temperature: 3.0,
        gamma,
        reward_noise_std: 0.0,
        ..Default::default()
    };
    random_mdp(&cfg, &mut rng::stream(seed, 11)).unwrap()
}

pub fn random_tabular(seed: u64, n_states: usize, n_actions: usize) -> Policy {
    let mut r = rng::stream(seed, 12);
    let theta = (0..n_states * n_actions).map(|_| r.random_range(-1.0..1.0)).collect();
    Policy::tabular(n_states, n_actions, theta).unwrap()
}

pub fn random_mlp(seed: u64, n_states: usize, hidden: usize, n_actions: usize) -> Policy {
    let mut r = rng::stream(seed, 13);
    let np = Policy::mlp_param_count(hidden, n_actions);
    let theta = (0..np).map(|_| r.random_range(-1.0..1.0)).collect();
    Policy::mlp(n_states, hidden, n_actions, theta).unwrap()
}

/// Two-state chain with terminal-free deterministic swap.
pub fn cycle(gamma: f64) -> FiniteMdp {
    FiniteMdp::new(
        gamma,
        vec![1.0, 0.0],
        vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
        vec![vec![1.0], vec![0.0]],
    )
    .unwrap()
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

pub fn mean_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
