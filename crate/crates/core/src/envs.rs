//! Benchmark environments: the four-state aliasing counterexample and a
//! seeded random-MDP generator.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{FeatureMap, FiniteMdp};
use crate::policy::{softmax, Policy};
use crate::rng;

const IMANI_JSON: &str = include_str!("../assets/imani.json");

/// An MDP bundled with a fixed behavior policy, an initial target policy and
/// critic features.
#[derive(Clone, Debug)]
pub struct BenchEnv {
    pub name: String,
    pub mdp: FiniteMdp,
    pub behavior: Policy,
    pub init_policy: Policy,
    pub features: FeatureMap,
}

pub const IMANI_BEHAVIOR: [f64; 2] = [0.25, 0.75];
pub const IMANI_INIT: [f64; 2] = [0.9, 0.1];

fn imani_from_mdp(mdp: FiniteMdp) -> Result<BenchEnv> {
    if mdp.n_actions != 2 {
        return Err(Error::Config(format!(
            "aliasing benchmark needs 2 actions, spec has {}",
            mdp.n_actions
        )));
    }
    let behavior = Policy::tabular_from_probs(mdp.n_states, &IMANI_BEHAVIOR)?;
    let init_policy = Policy::tabular_from_probs(mdp.n_states, &IMANI_INIT)?;
    let features = FeatureMap::one_hot(&mdp);
    Ok(BenchEnv {
        name: "imani".into(),
        mdp,
        behavior,
        init_policy,
        features,
    })
}

/// Aliasing benchmark loaded from an MDP JSON file.
pub fn imani_env(spec_path: impl AsRef<Path>) -> Result<BenchEnv> {
    imani_from_mdp(FiniteMdp::load(spec_path)?)
}

/// Aliasing benchmark from the bundled asset.
pub fn imani_default() -> BenchEnv {
    let mdp = FiniteMdp::from_json_str(IMANI_JSON).expect("bundled asset is valid");
    imani_from_mdp(mdp).expect("bundled asset is valid")
}

/// How rewards are drawn by [`random_mdp`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Softmax over the actions of each state, then divided by the largest
    /// entry so rewards lie in `[0, 1]`.
    #[default]
    PerState,
    /// One softmax over all state-action pairs, divided by its maximum.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpConfig {
    pub n_states: usize,
    pub n_actions: usize,
    pub temperature: f64,
    pub gamma: f64,
    #[serde(default)]
    pub reward_mode: RewardMode,
    #[serde(default = "default_noise")]
    pub reward_noise_std: f64,
}

fn default_noise() -> f64 {
    0.1
}

impl Default for RandomMdpConfig {
    fn default() -> Self {
        RandomMdpConfig {
            n_states: 30,
            n_actions: 2,
            temperature: 10.0,
            gamma: 0.95,
            reward_mode: RewardMode::PerState,
            reward_noise_std: 0.1,
        }
    }
}

fn tempered<R: Rng + ?Sized>(len: usize, temperature: f64, rng: &mut R) -> Vec<f64> {
    let logits: Vec<f64> = (0..len).map(|_| temperature * rng.random::<f64>()).collect();
    softmax(&logits)
}

fn rescale_to_unit(v: &mut [f64]) {
    let max = v.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        v.iter_mut().for_each(|x| *x /= max);
    }
}

/// Random MDP whose transition rows are `softmax(T u)` with `u` uniform on
/// `[0, 1]^n`; large temperatures give near-deterministic rows. The start
/// distribution is uniform.
pub fn random_mdp<R: Rng + ?Sized>(cfg: &RandomMdpConfig, rng: &mut R) -> Result<FiniteMdp> {
    let (n, m) = (cfg.n_states, cfg.n_actions);
    if n < 2 || m < 1 {
        return Err(Error::InvalidArgument(format!(
            "random MDP needs at least 2 states and 1 action, got {n} and {m}"
        )));
    }
    let transition: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| (0..m).map(|_| tempered(n, cfg.temperature, rng)).collect())
        .collect();
    let mut flat: Vec<f64> = match cfg.reward_mode {
        RewardMode::PerState => (0..n).flat_map(|_| tempered(m, cfg.temperature, rng)).collect(),
        RewardMode::Global => tempered(n * m, cfg.temperature, rng),
    };
    rescale_to_unit(&mut flat);
    let reward = flat.chunks(m).map(|c| c.to_vec()).collect();
    let mdp = FiniteMdp::new(cfg.gamma, vec![1.0 / n as f64; n], transition, reward)?
        .with_reward_noise(cfg.reward_noise_std);
    // softmax rows can miss 1 by a few ulps; renormalize before validating
    let mdp = renormalize(mdp);
    mdp.ensure_valid()?;
    Ok(mdp)
}

fn renormalize(mdp: FiniteMdp) -> FiniteMdp {
    let (n, m) = (mdp.n_states, mdp.n_actions);
    let transition = (0..n)
        .map(|s| {
            (0..m)
                .map(|a| {
                    let row = mdp.next_dist(s, a);
                    let z: f64 = row.iter().sum();
                    row.iter().map(|p| p / z).collect()
                })
                .collect()
        })
        .collect();
    let reward = (0..n)
        .map(|s| (0..m).map(|a| mdp.reward(s, a)).collect())
        .collect();
    FiniteMdp::new(mdp.gamma, mdp.mu0.clone(), transition, reward)
        .expect("shapes unchanged")
        .with_reward_noise(mdp.reward_noise_std)
}

/// Settings of [`random_suite`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    #[serde(default)]
    pub mdp: RandomMdpConfig,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Initial network weights are uniform on `[-init_scale, init_scale]`.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_hidden() -> usize {
    5
}

fn default_init_scale() -> f64 {
    0.5
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            mdp: RandomMdpConfig::default(),
            hidden: default_hidden(),
            init_scale: default_init_scale(),
        }
    }
}

/// Environment `index` of the family keyed by `seed`.
pub fn random_env(cfg: &SuiteConfig, seed: u64, index: u64) -> Result<BenchEnv> {
    let mut r = rng::keyed(seed, &[0x5eed_0f_e4f, index]);
    let mdp = random_mdp(&cfg.mdp, &mut r)?;
    let np = Policy::mlp_param_count(cfg.hidden, mdp.n_actions);
    let theta = (0..np)
        .map(|_| r.random_range(-cfg.init_scale..=cfg.init_scale))
        .collect();
    let init_policy = Policy::mlp(mdp.n_states, cfg.hidden, mdp.n_actions, theta)?;
    let behavior = Policy::tabular_uniform(mdp.n_states, mdp.n_actions);
    let features = FeatureMap::one_hot(&mdp);
    Ok(BenchEnv {
        name: format!("random-{seed}-{index}"),
        mdp,
        behavior,
        init_policy,
        features,
    })
}

/// `count` environments keyed by `(seed, index)`.
pub fn random_suite(cfg: &SuiteConfig, count: usize, seed: u64) -> Result<Vec<BenchEnv>> {
    (0..count as u64).map(|i| random_env(cfg, seed, i)).collect()
}
