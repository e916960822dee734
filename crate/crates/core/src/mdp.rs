//! Finite MDPs, simulation, off-policy datasets and linear feature maps.
//!
//! State-action pairs are flattened row-major, `s * n_actions + a`, in every
//! vector and matrix of this crate.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::policy::Policy;
use crate::rng::sample_categorical;

const SUM_TOL: f64 = 1e-12;

/// Tabular MDP `(S, A, r, p, gamma, mu0)` with optional absorbing terminal
/// states and an optional observation-aliasing map used by policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpFile", into = "MdpFile")]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub mu0: Vec<f64>,
    /// Flat `[s][a][s']`.
    transition: Vec<f64>,
    /// Flat `[s][a]`.
    reward: Vec<f64>,
    pub terminal: Vec<bool>,
    pub aliasing: Option<Vec<usize>>,
    /// Standard deviation of additive Gaussian noise on observed rewards.
    pub reward_noise_std: f64,
}

impl FiniteMdp {
    /// Builds an MDP from nested `[s][a][s']` transitions and `[s][a]`
    /// rewards. Only shapes are checked here; see [`FiniteMdp::validate`].
    pub fn new(
        gamma: f64,
        mu0: Vec<f64>,
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
    ) -> Result<Self> {
        MdpFile {
            n_states: mu0.len(),
            n_actions: transition.first().map_or(0, |r| r.len()),
            gamma,
            mu0,
            transition,
            reward,
            terminal: None,
            aliasing: None,
            reward_noise_std: None,
        }
        .try_into()
    }

    pub fn with_terminal(mut self, terminal: Vec<bool>) -> Result<Self> {
        if terminal.len() != self.n_states {
            return Err(Error::Shape(format!(
                "terminal has {} entries for {} states",
                terminal.len(),
                self.n_states
            )));
        }
        self.terminal = terminal;
        Ok(self)
    }

    pub fn with_aliasing(mut self, aliasing: Vec<usize>) -> Self {
        self.aliasing = Some(aliasing);
        self
    }

    pub fn with_reward_noise(mut self, std: f64) -> Self {
        self.reward_noise_std = std;
        self
    }

    pub fn n_sa(&self) -> usize {
        self.n_states * self.n_actions
    }

    #[inline]
    pub fn sa(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// Next-state distribution `p(. | s, a)`.
    #[inline]
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let n = self.n_states;
        let start = (s * self.n_actions + a) * n;
        &self.transition[start..start + n]
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.next_dist(s, a)[s_next]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[self.sa(s, a)]
    }

    /// Noise-free rewards as a flat state-action vector.
    pub fn reward_vector(&self) -> &[f64] {
        &self.reward
    }

    #[inline]
    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn has_terminal(&self) -> bool {
        self.terminal.iter().any(|&t| t)
    }

    /// State fed to policies: the aliasing image of `s` when aliasing is set.
    #[inline]
    pub fn observe(&self, s: usize) -> usize {
        match &self.aliasing {
            Some(map) => map[s],
            None => s,
        }
    }

    /// Lists every violated invariant; an empty list means the MDP is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (n, m) = (self.n_states, self.n_actions);
        if n == 0 || m == 0 {
            out.push(Violation::new(
                ViolationKind::Empty,
                format!("empty MDP ({n} states, {m} actions)"),
            ));
            return out;
        }
        if !(0.0..1.0).contains(&self.gamma) {
            out.push(Violation::new(
                ViolationKind::Discount,
                format!("gamma {} outside [0, 1)", self.gamma),
            ));
        }
        for s in 0..n {
            for a in 0..m {
                let row = self.next_dist(s, a);
                if let Some(sp) = row.iter().position(|&p| !(p >= 0.0) || !p.is_finite()) {
                    out.push(Violation::new(
                        ViolationKind::NegativeProbability,
                        format!("transition (s={s},a={a},s'={sp}) is {}", row[sp]),
                    ));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > SUM_TOL {
                    out.push(Violation::new(
                        ViolationKind::RowSum,
                        format!("row (s={s},a={a}) sums to {sum}"),
                    ));
                }
                if !self.reward(s, a).is_finite() {
                    out.push(Violation::new(
                        ViolationKind::NonFiniteReward,
                        format!("reward (s={s},a={a}) is not finite"),
                    ));
                }
            }
        }
        let mu_sum: f64 = self.mu0.iter().sum();
        if self.mu0.iter().any(|&p| !(p >= 0.0)) {
            out.push(Violation::new(
                ViolationKind::NegativeProbability,
                "mu0 has a negative entry".to_string(),
            ));
        }
        if (mu_sum - 1.0).abs() > SUM_TOL {
            out.push(Violation::new(
                ViolationKind::StartSum,
                format!("mu0 sums to {mu_sum}"),
            ));
        }
        for s in (0..n).filter(|&s| self.terminal[s]) {
            for a in 0..m {
                if self.p(s, a, s) != 1.0 {
                    out.push(Violation::new(
                        ViolationKind::TerminalNotAbsorbing,
                        format!("terminal state {s} not absorbing under action {a}"),
                    ));
                }
                if self.reward(s, a) != 0.0 {
                    out.push(Violation::new(
                        ViolationKind::TerminalReward,
                        format!("terminal reward nonzero at (s={s},a={a})"),
                    ));
                }
            }
        }
        if let Some(map) = &self.aliasing {
            if map.len() != n {
                out.push(Violation::new(
                    ViolationKind::Aliasing,
                    format!("aliasing map has {} entries for {n} states", map.len()),
                ));
            } else if let Some(s) = map.iter().position(|&o| o >= n) {
                out.push(Violation::new(
                    ViolationKind::Aliasing,
                    format!("aliasing maps state {s} to out-of-range {}", map[s]),
                ));
            }
        }
        if !(self.reward_noise_std >= 0.0) {
            out.push(Violation::new(
                ViolationKind::Noise,
                format!("reward noise std {} is negative", self.reward_noise_std),
            ));
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidMdp(v))
        }
    }

    /// Samples one transition. Terminal states return `(s, 0)`.
    pub fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (usize, f64) {
        if self.terminal[s] {
            return (s, 0.0);
        }
        let s_next = sample_categorical(self.next_dist(s, a), rng);
        let mut r = self.reward(s, a);
        if self.reward_noise_std > 0.0 {
            let eps: f64 = StandardNormal.sample(rng);
            r += self.reward_noise_std * eps;
        }
        (s_next, r)
    }

    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.mu0, rng)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: MdpFile = serde_json::from_str(s)?;
        let mdp = FiniteMdp::try_from(file)?;
        mdp.ensure_valid()?;
        Ok(mdp)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// On-disk layout of an MDP.
#[derive(Serialize, Deserialize)]
struct MdpFile {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    mu0: Vec<f64>,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    terminal: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aliasing: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reward_noise_std: Option<f64>,
}

impl TryFrom<MdpFile> for FiniteMdp {
    type Error = Error;

    fn try_from(f: MdpFile) -> Result<Self> {
        let (n, m) = (f.n_states, f.n_actions);
        let shape = |what: &str| Error::Shape(format!("{what} does not match {n} states x {m} actions"));
        if f.mu0.len() != n {
            return Err(shape("mu0"));
        }
        if f.transition.len() != n || f.transition.iter().any(|r| r.len() != m) {
            return Err(shape("transition"));
        }
        if f.transition.iter().flatten().any(|r| r.len() != n) {
            return Err(shape("transition row"));
        }
        if f.reward.len() != n || f.reward.iter().any(|r| r.len() != m) {
            return Err(shape("reward"));
        }
        let terminal = f.terminal.unwrap_or_else(|| vec![false; n]);
        if terminal.len() != n {
            return Err(shape("terminal"));
        }
        Ok(FiniteMdp {
            n_states: n,
            n_actions: m,
            gamma: f.gamma,
            mu0: f.mu0,
            transition: f.transition.into_iter().flatten().flatten().collect(),
            reward: f.reward.into_iter().flatten().collect(),
            terminal,
            aliasing: f.aliasing,
            reward_noise_std: f.reward_noise_std.unwrap_or(0.0),
        })
    }
}

impl From<FiniteMdp> for MdpFile {
    fn from(mdp: FiniteMdp) -> Self {
        let (n, m) = (mdp.n_states, mdp.n_actions);
        let transition = (0..n)
            .map(|s| (0..m).map(|a| mdp.next_dist(s, a).to_vec()).collect())
            .collect();
        let reward = (0..n)
            .map(|s| (0..m).map(|a| mdp.reward(s, a)).collect())
            .collect();
        MdpFile {
            n_states: n,
            n_actions: m,
            gamma: mdp.gamma,
            mu0: mdp.mu0.clone(),
            transition,
            reward,
            terminal: mdp.terminal.iter().any(|&t| t).then(|| mdp.terminal.clone()),
            aliasing: mdp.aliasing.clone(),
            reward_noise_std: (mdp.reward_noise_std != 0.0).then_some(mdp.reward_noise_std),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    Empty,
    Discount,
    RowSum,
    NegativeProbability,
    NonFiniteReward,
    StartSum,
    TerminalNotAbsorbing,
    TerminalReward,
    Aliasing,
    Noise,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    fn new(kind: ViolationKind, message: String) -> Self {
        Violation { kind, message }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// One logged step of experience.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    /// Steps since the start of the episode.
    pub t: usize,
    pub episode_start: bool,
}

/// Ordered off-policy experience.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub transitions: Vec<Transition>,
    pub behavior_id: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Contiguous episodes, split at `episode_start` markers.
    pub fn episodes(&self) -> Vec<&[Transition]> {
        let mut out = Vec::new();
        let mut begin = 0;
        for (i, tr) in self.transitions.iter().enumerate() {
            if tr.episode_start && i > begin {
                out.push(&self.transitions[begin..i]);
                begin = i;
            }
        }
        if begin < self.transitions.len() {
            out.push(&self.transitions[begin..]);
        }
        out
    }

    /// States recorded at `t = 0`.
    pub fn start_states(&self) -> Vec<usize> {
        self.transitions
            .iter()
            .filter(|t| t.episode_start)
            .map(|t| t.s)
            .collect()
    }
}

/// Rolls behavior-policy episodes from `mu0` until `n_transitions` steps are
/// logged. Episodes end after `episode_len` steps or on entering a terminal
/// state; the last transition keeps its real `s_next`.
pub fn collect_dataset<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    behavior: &Policy,
    n_transitions: usize,
    episode_len: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if episode_len == 0 {
        return Err(Error::InvalidArgument("episode_len must be at least 1".into()));
    }
    behavior.check_compatible(mdp)?;
    let mut transitions = Vec::with_capacity(n_transitions);
    let mut s = mdp.sample_start(rng);
    let mut t = 0;
    while transitions.len() < n_transitions {
        let a = behavior.sample_action(mdp.observe(s), rng);
        let (s_next, r) = mdp.step(s, a, rng);
        transitions.push(Transition {
            s,
            a,
            r,
            s_next,
            t,
            episode_start: t == 0,
        });
        t += 1;
        if t >= episode_len || mdp.is_terminal(s_next) || mdp.is_terminal(s) {
            s = mdp.sample_start(rng);
            t = 0;
        } else {
            s = s_next;
        }
    }
    Ok(Dataset {
        transitions,
        behavior_id: behavior.label(),
    })
}

/// Linear state-action features; row `s * n_actions + a` holds `phi(s, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub n_features: usize,
    n_actions: usize,
    table: Vec<f64>,
}

impl FeatureMap {
    pub fn from_matrix(table: &DMatrix<f64>, n_actions: usize) -> Result<Self> {
        if n_actions == 0 || table.nrows() % n_actions != 0 {
            return Err(Error::Shape(format!(
                "{} feature rows not divisible by {n_actions} actions",
                table.nrows()
            )));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature table".into()));
        }
        let n_features = table.ncols();
        let mut flat = Vec::with_capacity(table.len());
        for r in 0..table.nrows() {
            flat.extend(table.row(r).iter());
        }
        Ok(FeatureMap {
            n_features,
            n_actions,
            table: flat,
        })
    }

    /// Identity features of size `n_states * n_actions`.
    pub fn one_hot(mdp: &FiniteMdp) -> Self {
        let n = mdp.n_sa();
        Self::from_matrix(&DMatrix::identity(n, n), mdp.n_actions).expect("identity is finite")
    }

    /// Standard-normal random features with `n_features` columns.
    pub fn random<R: Rng + ?Sized>(mdp: &FiniteMdp, n_features: usize, rng: &mut R) -> Self {
        let n = mdp.n_sa();
        let m = DMatrix::from_fn(n, n_features, |_, _| StandardNormal.sample(rng));
        Self::from_matrix(&m, mdp.n_actions).expect("gaussian draws are finite")
    }

    pub fn n_rows(&self) -> usize {
        self.table.len() / self.n_features.max(1)
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let i = s * self.n_actions + a;
        &self.table[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn row_index(&self, i: usize) -> &[f64] {
        &self.table[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_rows(), self.n_features, &self.table)
    }

    /// Numerical rank at relative tolerance 1e-10.
    pub fn rank(&self) -> usize {
        linalg::numerical_rank(&self.matrix(), 1e-10)
    }

    pub fn check_compatible(&self, mdp: &FiniteMdp) -> Result<()> {
        if self.n_rows() != mdp.n_sa() || self.n_actions != mdp.n_actions {
            return Err(Error::Shape(format!(
                "feature map has {} rows, MDP has {} state-action pairs",
                self.n_rows(),
                mdp.n_sa()
            )));
        }
        Ok(())
    }
}

/// Convenience alias matching the operation name used throughout the docs.
pub fn one_hot_features(mdp: &FiniteMdp) -> FeatureMap {
    FeatureMap::one_hot(mdp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn bandit() -> FiniteMdp {
        FiniteMdp::new(0.5, vec![1.0], vec![vec![vec![1.0]]], vec![vec![0.0]]).unwrap()
    }

    #[test]
    fn degenerate_single_state_is_valid() {
        assert!(bandit().validate().is_empty());
    }

    #[test]
    fn bad_row_sum_is_reported_with_indices() {
        let mdp = FiniteMdp::new(
            0.9,
            vec![1.0, 0.0],
            vec![
                vec![vec![1.0, 0.0], vec![0.4, 0.5]],
                vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            ],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let v = mdp.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::RowSum);
        assert_eq!(v[0].to_string(), "row (s=0,a=1) sums to 0.9");
    }

    #[test]
    fn terminal_reward_is_reported() {
        let mdp = FiniteMdp::new(
            0.9,
            vec![1.0, 0.0],
            vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            vec![vec![0.0], vec![1.0]],
        )
        .unwrap()
        .with_terminal(vec![false, true])
        .unwrap();
        let v = mdp.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::TerminalReward);
        assert!(v[0].to_string().contains("terminal reward nonzero"));
    }

    #[test]
    fn step_deterministic_and_terminal() {
        let mdp = FiniteMdp::new(
            0.9,
            vec![1.0, 0.0],
            vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            vec![vec![3.0], vec![0.0]],
        )
        .unwrap()
        .with_terminal(vec![false, true])
        .unwrap();
        let mut r = rng::stream(1, 0);
        assert_eq!(mdp.step(0, 0, &mut r), (1, 3.0));
        assert_eq!(mdp.step(1, 0, &mut r), (1, 0.0));
    }

    #[test]
    fn one_hot_layout() {
        let mdp = FiniteMdp::new(
            0.9,
            vec![1.0, 0.0],
            vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            ],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let f = FeatureMap::one_hot(&mdp);
        assert_eq!(f.matrix(), DMatrix::identity(4, 4));
        assert_eq!(f.row(1, 0), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(f.rank(), 4);
    }

    #[test]
    fn observe_respects_aliasing() {
        let mdp = bandit();
        assert_eq!(mdp.observe(0), 0);
        let aliased = FiniteMdp::new(
            0.9,
            vec![1.0, 0.0, 0.0],
            vec![vec![vec![1.0, 0.0, 0.0]]; 3],
            vec![vec![0.0]; 3],
        )
        .unwrap()
        .with_aliasing(vec![0, 1, 1]);
        assert_eq!(aliased.observe(2), 1);
        for s in 0..3 {
            assert_eq!(aliased.observe(aliased.observe(s)), aliased.observe(s));
        }
    }

    #[test]
    fn shape_errors_on_load() {
        let bad = r#"{"n_states":2,"n_actions":1,"gamma":0.5,"mu0":[1.0],
            "transition":[[[1.0,0.0]],[[0.0,1.0]]],"reward":[[0.0],[0.0]]}"#;
        assert!(matches!(FiniteMdp::from_json_str(bad), Err(Error::Shape(_))));
    }
}
