//! Differentiable softmax policies: tabular logits and a one-hidden-layer
//! tanh network over the scalar state index.

use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;
use crate::rng::sample_categorical;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    /// One logit per (observed state, action): `theta[obs * n_actions + a]`.
    TabularSoftmax { n_states: usize, n_actions: usize },
    /// `logits = W2 tanh(W1 x + b1) + b2` with `x = obs / (n_states - 1)`.
    /// Parameters are laid out as `[W1, b1, W2 (row-major, n_actions x hidden), b2]`.
    MlpSoftmax {
        n_states: usize,
        hidden: usize,
        n_actions: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    pub theta: Vec<f64>,
    /// Parameter indices tracked by the gradient critic; `None` means all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_mask: Option<Vec<usize>>,
}

impl Policy {
    pub fn tabular(n_states: usize, n_actions: usize, theta: Vec<f64>) -> Result<Self> {
        let p = Policy {
            kind: PolicyKind::TabularSoftmax {
                n_states,
                n_actions,
            },
            theta,
            param_mask: None,
        };
        p.check_shape()?;
        Ok(p)
    }

    pub fn tabular_uniform(n_states: usize, n_actions: usize) -> Self {
        Self::tabular(n_states, n_actions, vec![0.0; n_states * n_actions]).expect("consistent shape")
    }

    /// Tabular policy with the same action probabilities in every state.
    pub fn tabular_from_probs(n_states: usize, probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidArgument(
                "tabular probabilities must be strictly positive".into(),
            ));
        }
        let logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        let theta = (0..n_states).flat_map(|_| logits.iter().copied()).collect();
        Self::tabular(n_states, probs.len(), theta)
    }

    pub fn mlp(n_states: usize, hidden: usize, n_actions: usize, theta: Vec<f64>) -> Result<Self> {
        let p = Policy {
            kind: PolicyKind::MlpSoftmax {
                n_states,
                hidden,
                n_actions,
            },
            theta,
            param_mask: None,
        };
        p.check_shape()?;
        Ok(p)
    }

    pub fn mlp_param_count(hidden: usize, n_actions: usize) -> usize {
        2 * hidden + hidden * n_actions + n_actions
    }

    pub fn with_mask(mut self, mask: Vec<usize>) -> Result<Self> {
        if let Some(&i) = mask.iter().find(|&&i| i >= self.n_params()) {
            return Err(Error::InvalidArgument(format!(
                "mask index {i} out of range for {} parameters",
                self.n_params()
            )));
        }
        self.param_mask = Some(mask);
        Ok(self)
    }

    /// Indices of the output layer (`W2`, `b2`) for networks; every index
    /// for tabular policies.
    pub fn last_layer_indices(&self) -> Vec<usize> {
        match self.kind {
            PolicyKind::TabularSoftmax { .. } => (0..self.n_params()).collect(),
            PolicyKind::MlpSoftmax { hidden, .. } => (2 * hidden..self.n_params()).collect(),
        }
    }

    /// 0/1 indicator of gradient-critic-tracked parameters.
    pub fn mask_indicator(&self) -> Vec<bool> {
        match &self.param_mask {
            None => vec![true; self.n_params()],
            Some(m) => {
                let mut v = vec![false; self.n_params()];
                for &i in m {
                    v[i] = true;
                }
                v
            }
        }
    }

    fn expected_len(&self) -> usize {
        match self.kind {
            PolicyKind::TabularSoftmax {
                n_states,
                n_actions,
            } => n_states * n_actions,
            PolicyKind::MlpSoftmax {
                hidden, n_actions, ..
            } => Self::mlp_param_count(hidden, n_actions),
        }
    }

    fn check_shape(&self) -> Result<()> {
        if self.n_actions() == 0 {
            return Err(Error::Shape("policy needs at least one action".into()));
        }
        if self.theta.len() != self.expected_len() {
            return Err(Error::Shape(format!(
                "policy expects {} parameters, got {}",
                self.expected_len(),
                self.theta.len()
            )));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy parameters".into()));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn n_actions(&self) -> usize {
        match self.kind {
            PolicyKind::TabularSoftmax { n_actions, .. } | PolicyKind::MlpSoftmax { n_actions, .. } => {
                n_actions
            }
        }
    }

    pub fn n_states(&self) -> usize {
        match self.kind {
            PolicyKind::TabularSoftmax { n_states, .. } | PolicyKind::MlpSoftmax { n_states, .. } => {
                n_states
            }
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            PolicyKind::TabularSoftmax {
                n_states,
                n_actions,
            } => format!("tabular-softmax({n_states}x{n_actions})"),
            PolicyKind::MlpSoftmax {
                n_states,
                hidden,
                n_actions,
            } => format!("mlp-softmax({n_states}->{hidden}->{n_actions})"),
        }
    }

    pub fn check_compatible(&self, mdp: &FiniteMdp) -> Result<()> {
        if self.n_actions() != mdp.n_actions || self.n_states() != mdp.n_states {
            return Err(Error::Shape(format!(
                "policy {} does not fit an MDP with {} states and {} actions",
                self.label(),
                mdp.n_states,
                mdp.n_actions
            )));
        }
        Ok(())
    }

    fn mlp_input(n_states: usize, obs: usize) -> f64 {
        if n_states > 1 {
            obs as f64 / (n_states - 1) as f64
        } else {
            0.0
        }
    }

    fn mlp_hidden(&self, obs: usize, hidden: usize, n_states: usize) -> Vec<f64> {
        let x = Self::mlp_input(n_states, obs);
        (0..hidden)
            .map(|j| (self.theta[j] * x + self.theta[hidden + j]).tanh())
            .collect()
    }

    fn logits(&self, obs: usize, h: Option<&[f64]>) -> Vec<f64> {
        match self.kind {
            PolicyKind::TabularSoftmax { n_actions, .. } => {
                self.theta[obs * n_actions..(obs + 1) * n_actions].to_vec()
            }
            PolicyKind::MlpSoftmax {
                hidden, n_actions, ..
            } => {
                let h = h.expect("hidden activations");
                let w2 = 2 * hidden;
                let b2 = w2 + hidden * n_actions;
                (0..n_actions)
                    .map(|b| {
                        let row = &self.theta[w2 + b * hidden..w2 + (b + 1) * hidden];
                        row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + self.theta[b2 + b]
                    })
                    .collect()
            }
        }
    }

    /// Action probabilities at an observed state.
    pub fn probs(&self, obs: usize) -> Vec<f64> {
        let h = match self.kind {
            PolicyKind::MlpSoftmax {
                hidden, n_states, ..
            } => Some(self.mlp_hidden(obs, hidden, n_states)),
            _ => None,
        };
        softmax(&self.logits(obs, h.as_deref()))
    }

    pub fn log_prob(&self, obs: usize, a: usize) -> f64 {
        self.probs(obs)[a].ln()
    }

    /// `grad_theta log pi(a | obs)` written into `out`.
    pub fn score_into(&self, obs: usize, a: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match self.kind {
            PolicyKind::TabularSoftmax { n_actions, .. } => {
                let p = self.probs(obs);
                let base = obs * n_actions;
                for b in 0..n_actions {
                    out[base + b] = -p[b];
                }
                out[base + a] += 1.0;
            }
            PolicyKind::MlpSoftmax {
                n_states,
                hidden,
                n_actions,
            } => {
                let x = Self::mlp_input(n_states, obs);
                let h = self.mlp_hidden(obs, hidden, n_states);
                let p = softmax(&self.logits(obs, Some(&h)));
                let w2 = 2 * hidden;
                let b2 = w2 + hidden * n_actions;
                let mut dh = vec![0.0; hidden];
                for b in 0..n_actions {
                    let d = f64::from(u8::from(a == b)) - p[b];
                    out[b2 + b] = d;
                    for j in 0..hidden {
                        out[w2 + b * hidden + j] = d * h[j];
                        dh[j] += d * self.theta[w2 + b * hidden + j];
                    }
                }
                for j in 0..hidden {
                    let dpre = dh[j] * (1.0 - h[j] * h[j]);
                    out[j] = dpre * x;
                    out[hidden + j] = dpre;
                }
            }
        }
    }

    pub fn score(&self, obs: usize, a: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_params());
        self.score_into(obs, a, out.as_mut_slice());
        out
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, obs: usize, rng: &mut R) -> usize {
        sample_categorical(&self.probs(obs), rng)
    }

    /// Largest absolute score component over all states and actions of `mdp`.
    pub fn score_infinity_bound(&self, mdp: &FiniteMdp) -> f64 {
        let mut best: f64 = 0.0;
        let mut buf = vec![0.0; self.n_params()];
        for s in 0..mdp.n_states {
            let obs = mdp.observe(s);
            for a in 0..mdp.n_actions {
                self.score_into(obs, a, &mut buf);
                best = buf.iter().fold(best, |m, v| m.max(v.abs()));
            }
        }
        best
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let p: Policy = serde_json::from_str(s)?;
        p.check_shape()?;
        if let Some(mask) = &p.param_mask {
            p.clone().with_mask(mask.clone())?;
        }
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}
