//! Policy-gradient estimators built from logged off-policy data and
//! (possibly learned) value and gradient critics.
//!
//! Critics are passed as tables over flattened state-action pairs: `q_hat`
//! has one entry per pair and `gamma_hat` one row per pair. Every estimate
//! targets the unnormalized gradient.

mod adam;

pub use adam::AdamState;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::BenchEnv;
use crate::error::{Error, Result};
use crate::lstd;
use crate::mdp::{Dataset, FiniteMdp, Transition};
use crate::oracle;
use crate::policy::Policy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub grad: Vec<f64>,
    pub estimator_id: String,
    pub lambda: Option<f64>,
    pub n: Option<usize>,
    /// Importance-sampling ratios were applied.
    pub corrected: bool,
    pub n_samples: usize,
    pub seed: Option<u64>,
}

impl EstimateReport {
    pub fn new(grad: DVector<f64>, id: &str, n_samples: usize) -> Self {
        EstimateReport {
            grad: grad.as_slice().to_vec(),
            estimator_id: id.to_string(),
            lambda: None,
            n: None,
            corrected: false,
            n_samples,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn grad_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.grad)
    }
}

/// How on-policy actions `A_t ~ pi(.|S_t)` are drawn inside estimators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionDraw {
    #[default]
    Sampled,
    /// Exact expectation over the policy's action distribution.
    Expected,
}

/// How the gradient critic enters the lambda-weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceVariant {
    /// `(lambda gamma)^t (g_t + (1 - lambda) Gamma_t)`.
    #[default]
    Blend,
    /// `(lambda gamma)^t (g_t + Gamma_t)`.
    FullCritic,
}

/// Start states for the start-state estimator.
#[derive(Clone, Debug, PartialEq)]
pub enum StartStates {
    /// Exact expectation over the MDP's start distribution.
    Exact,
    /// States recorded at the start of logged episodes.
    Sampled(Vec<usize>),
}

fn importance_ratio(mdp: &FiniteMdp, policy: &Policy, behavior: &Policy, tr: &Transition) -> Result<f64> {
    let obs = mdp.observe(tr.s);
    let b = behavior.probs(obs)[tr.a];
    if b == 0.0 {
        return Err(Error::ZeroSupport {
            state: tr.s,
            action: tr.a,
        });
    }
    Ok(policy.probs(obs)[tr.a] / b)
}

/// Writes `q(s, A) score(s, A)` into `g` and `Gamma(s, A)` into `gm` for an
/// on-policy action `A` at `s` (or their expectation).
#[allow(clippy::too_many_arguments)]
fn on_policy_terms<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    policy: &Policy,
    q_hat: &DVector<f64>,
    gamma_hat: Option<&DMatrix<f64>>,
    s: usize,
    draw: ActionDraw,
    rng: &mut R,
    g: &mut [f64],
    gm: &mut [f64],
) {
    let np = policy.n_params();
    g.iter_mut().for_each(|v| *v = 0.0);
    gm.iter_mut().for_each(|v| *v = 0.0);
    if mdp.is_terminal(s) {
        return;
    }
    let obs = mdp.observe(s);
    let weights: Vec<(usize, f64)> = match draw {
        ActionDraw::Sampled => vec![(policy.sample_action(obs, rng), 1.0)],
        ActionDraw::Expected => policy.probs(obs).into_iter().enumerate().map(|(a, p)| (a, p)).collect(),
    };
    let mut score = vec![0.0; np];
    for (a, w) in weights {
        let i = mdp.sa(s, a);
        policy.score_into(obs, a, &mut score);
        for k in 0..np {
            g[k] += w * q_hat[i] * score[k];
        }
        if let Some(gh) = gamma_hat {
            for k in 0..np {
                gm[k] += w * gh[(i, k)];
            }
        }
    }
}

/// `(1/N) sum rho_i q(s_i, a_i) score(s_i, a_i)` over logged actions, with
/// `rho_i = pi(a_i|s_i) / beta(a_i|s_i)`.
pub fn semi_gradient(
    mdp: &FiniteMdp,
    dataset: &Dataset,
    q_hat: &DVector<f64>,
    policy: &Policy,
    behavior: &Policy,
) -> Result<EstimateReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let np = policy.n_params();
    let mut acc = DVector::zeros(np);
    let mut score = vec![0.0; np];
    for tr in &dataset.transitions {
        let rho = importance_ratio(mdp, policy, behavior, tr)?;
        policy.score_into(mdp.observe(tr.s), tr.a, &mut score);
        let w = rho * q_hat[mdp.sa(tr.s, tr.a)];
        for k in 0..np {
            acc[k] += w * score[k];
        }
    }
    let mut r = EstimateReport::new(acc / dataset.len() as f64, "semi_gradient", dataset.len());
    r.corrected = true;
    Ok(r)
}

/// Per-trajectory `sum_{t<=n} gamma^t rho_t g_t + gamma^n rho_n Gamma_n`,
/// averaged over trajectories. Without a horizon (or without a gradient
/// critic) the whole trajectory is summed and nothing is bootstrapped. A
/// trajectory shorter than the horizon bootstraps at its last state.
#[allow(clippy::too_many_arguments)]
pub fn pathwise_is_gradient<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    trajectories: &[&[Transition]],
    q_hat: &DVector<f64>,
    gamma_hat: Option<&DMatrix<f64>>,
    policy: &Policy,
    behavior: &Policy,
    horizon: Option<usize>,
    draw: ActionDraw,
    rng: &mut R,
) -> Result<EstimateReport> {
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("no trajectories".into()));
    }
    let np = policy.n_params();
    let mut acc = DVector::zeros(np);
    let mut g = vec![0.0; np];
    let mut gm = vec![0.0; np];
    let bootstrap = horizon.is_some() && gamma_hat.is_some();
    let mut n_samples = 0;
    for traj in trajectories {
        let len = traj.len();
        let last = match horizon {
            Some(n) => n.min(len.saturating_sub(1)),
            None => len.saturating_sub(1),
        };
        let mut rho = 1.0;
        let mut disc = 1.0;
        for (t, tr) in traj.iter().enumerate().take(last + 1) {
            on_policy_terms(mdp, policy, q_hat, gamma_hat, tr.s, draw, rng, &mut g, &mut gm);
            let w = disc * rho;
            for k in 0..np {
                acc[k] += w * g[k];
            }
            n_samples += 1;
            if t == last && bootstrap {
                for k in 0..np {
                    acc[k] += w * gm[k];
                }
            }
            rho *= importance_ratio(mdp, policy, behavior, tr)?;
            disc *= mdp.gamma;
        }
    }
    let mut r = EstimateReport::new(acc / trajectories.len() as f64, "pathwise_is", n_samples);
    r.corrected = true;
    r.n = horizon;
    Ok(r)
}

/// Average over start states of `q(s0, A) score(s0, A) + Gamma(s0, A)` with
/// `A ~ pi(.|s0)`.
pub fn start_state_gradient<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    starts: &StartStates,
    q_hat: &DVector<f64>,
    gamma_hat: &DMatrix<f64>,
    policy: &Policy,
    draw: ActionDraw,
    rng: &mut R,
) -> Result<EstimateReport> {
    let np = policy.n_params();
    let mut acc = DVector::zeros(np);
    let mut g = vec![0.0; np];
    let mut gm = vec![0.0; np];
    let weighted: Vec<(usize, f64)> = match starts {
        StartStates::Exact => mdp.mu0.iter().copied().enumerate().filter(|&(_, p)| p > 0.0).collect(),
        StartStates::Sampled(v) => {
            if v.is_empty() {
                return Err(Error::InvalidArgument("no start states".into()));
            }
            let w = 1.0 / v.len() as f64;
            v.iter().map(|&s| (s, w)).collect()
        }
    };
    for &(s, w) in &weighted {
        on_policy_terms(mdp, policy, q_hat, Some(gamma_hat), s, draw, rng, &mut g, &mut gm);
        for k in 0..np {
            acc[k] += w * (g[k] + gm[k]);
        }
    }
    let mut r = EstimateReport::new(acc, "start_state", weighted.len());
    r.lambda = Some(0.0);
    Ok(r)
}

/// Lambda-weighted trace estimator over logged trajectories. Tracked
/// parameters accumulate `(lambda gamma)^t w_t (g_t + c Gamma_t)` with
/// `c = 1 - lambda` (blend) or `c = 1`; untracked parameters accumulate
/// `gamma^t w_t g_t`. `w_t` is the product of importance ratios when
/// `corrected`, else 1. The sum is averaged over trajectories.
#[allow(clippy::too_many_arguments)]
pub fn lambda_trace_gradient<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    trajectories: &[&[Transition]],
    q_hat: &DVector<f64>,
    gamma_hat: &DMatrix<f64>,
    policy: &Policy,
    behavior: &Policy,
    lambda: f64,
    corrected: bool,
    variant: TraceVariant,
    draw: ActionDraw,
    rng: &mut R,
) -> Result<EstimateReport> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("no trajectories".into()));
    }
    let np = policy.n_params();
    let mask = policy.mask_indicator();
    let critic_weight = match variant {
        TraceVariant::Blend => 1.0 - lambda,
        TraceVariant::FullCritic => 1.0,
    };
    let mut acc = DVector::zeros(np);
    let mut g = vec![0.0; np];
    let mut gm = vec![0.0; np];
    let mut n_samples = 0;
    for traj in trajectories {
        let mut rho = 1.0;
        let mut trace = 1.0;
        let mut disc = 1.0;
        for tr in traj.iter() {
            let tracked_live = trace != 0.0;
            let untracked_live = mask.iter().any(|&m| !m) && disc != 0.0;
            if !tracked_live && !untracked_live {
                break;
            }
            on_policy_terms(mdp, policy, q_hat, Some(gamma_hat), tr.s, draw, rng, &mut g, &mut gm);
            n_samples += 1;
            for k in 0..np {
                acc[k] += if mask[k] {
                    trace * rho * (g[k] + critic_weight * gm[k])
                } else {
                    disc * rho * g[k]
                };
            }
            if corrected {
                rho *= importance_ratio(mdp, policy, behavior, tr)?;
            }
            trace *= lambda * mdp.gamma;
            disc *= mdp.gamma;
        }
    }
    let mut r = EstimateReport::new(acc / trajectories.len() as f64, "lambda_trace", n_samples);
    r.lambda = Some(lambda);
    r.corrected = corrected;
    Ok(r)
}

/// One point of an improvement curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ImprovePoint {
    pub iter: usize,
    pub ret: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ImproveOutcome {
    pub policy: Policy,
    pub curve: Vec<ImprovePoint>,
    /// Iterations whose critic solve needed ridge regularization.
    pub regularized_fits: usize,
}

/// Policy improvement on a fixed dataset: each iteration refits both LSTD
/// critics with fresh on-policy next actions, picks one logged transition
/// `i` uniformly and ascends (via Adam) along
/// `(lambda gamma)^{t_i} (g_i + c Gamma_i)`, `c` set by `variant`. The exact
/// return is recorded before the first and after every iteration.
#[allow(clippy::too_many_arguments)]
pub fn lstd_gamma_trace_improve<R: Rng + ?Sized>(
    env: &BenchEnv,
    dataset: &Dataset,
    lambda: f64,
    variant: TraceVariant,
    adam: &mut AdamState,
    iters: usize,
    rng: &mut R,
) -> Result<ImproveOutcome> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mdp = &env.mdp;
    let mut policy = env.init_policy.clone();
    let np = policy.n_params();
    let mask = policy.mask_indicator();
    let critic_weight = match variant {
        TraceVariant::Blend => 1.0 - lambda,
        TraceVariant::FullCritic => 1.0,
    };
    let mut curve = vec![ImprovePoint {
        iter: 0,
        ret: oracle::return_j(mdp, &policy)?,
    }];
    let mut regularized_fits = 0;
    let mut g = vec![0.0; np];
    let mut gm = vec![0.0; np];
    for iter in 0..iters {
        let fit = lstd::fit_sample(mdp, dataset, &env.features, &env.features, &policy, false, rng)?;
        regularized_fits += usize::from(fit.regularized);
        let q_hat = fit.q_table(&env.features);
        let gamma_hat = fit.gamma_table(&env.features);
        let tr = dataset.transitions[rng.random_range(0..dataset.len())];
        on_policy_terms(mdp, &policy, &q_hat, Some(&gamma_hat), tr.s, ActionDraw::Sampled, rng, &mut g, &mut gm);
        let trace = (lambda * mdp.gamma).powi(tr.t as i32);
        let disc = mdp.gamma.powi(tr.t as i32);
        let step = DVector::from_fn(np, |k, _| {
            if mask[k] {
                trace * (g[k] + critic_weight * gm[k])
            } else {
                disc * g[k]
            }
        });
        adam.step(&step, &mut policy.theta)?;
        curve.push(ImprovePoint {
            iter: iter + 1,
            ret: oracle::return_j(mdp, &policy)?,
        });
    }
    Ok(ImproveOutcome {
        policy,
        curve,
        regularized_fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn bandit() -> FiniteMdp {
        FiniteMdp::new(0.0, vec![1.0], vec![vec![vec![1.0], vec![1.0]]], vec![vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn on_policy_semi_gradient_is_plain_average() {
        let mdp = bandit();
        let pol = Policy::tabular_uniform(1, 2);
        let ds = Dataset {
            transitions: vec![Transition {
                s: 0,
                a: 0,
                r: 1.0,
                s_next: 0,
                t: 0,
                episode_start: true,
            }],
            behavior_id: "u".into(),
        };
        let q = DVector::from_column_slice(&[1.0, 0.0]);
        let r = semi_gradient(&mdp, &ds, &q, &pol, &pol).unwrap();
        assert_eq!(r.grad, vec![0.5, -0.5]);
    }

    #[test]
    fn zero_behavior_probability_errors() {
        let mdp = bandit();
        let pol = Policy::tabular_uniform(1, 2);
        let beh = Policy::tabular(1, 2, vec![0.0, f64::NEG_INFINITY]);
        assert!(beh.is_err());
        let beh = Policy::tabular(1, 2, vec![800.0, 0.0]).unwrap();
        let ds = Dataset {
            transitions: vec![Transition {
                s: 0,
                a: 1,
                r: 0.0,
                s_next: 0,
                t: 0,
                episode_start: true,
            }],
            behavior_id: "b".into(),
        };
        let q = DVector::zeros(2);
        assert!(matches!(
            semi_gradient(&mdp, &ds, &q, &pol, &beh),
            Err(Error::ZeroSupport { state: 0, action: 1 })
        ));
    }

    #[test]
    fn start_state_expected_matches_oracle() {
        let env = crate::envs::imani_default();
        let o = oracle::OracleGradients::compute(&env.mdp, &env.init_policy).unwrap();
        let mut r = rng::stream(0, 0);
        let est = start_state_gradient(
            &env.mdp,
            &StartStates::Exact,
            &o.q,
            &o.gamma_matrix,
            &env.init_policy,
            ActionDraw::Expected,
            &mut r,
        )
        .unwrap();
        assert!((est.grad_vector() - &o.grad_j).amax() < 1e-10);
    }
}
