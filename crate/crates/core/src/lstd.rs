//! Least-squares TD fixed points for the value critic and the gradient
//! critic, in sample and population form.
//!
//! Both critics share one system matrix per feature map,
//! `A = E[phi (phi - gamma phi')^T]`. The gradient critic solves `A G = B`
//! with `B = gamma E[phi q(s',a') score(s',a')^T]`, where `q` is either the
//! TD value critic or the true action values.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Solved};
use crate::mdp::{Dataset, FeatureMap, FiniteMdp};
use crate::oracle;
use crate::policy::Policy;

/// How the on-policy next action `a' ~ pi(.|s')` enters the estimates.
#[derive(Clone, Debug, PartialEq)]
pub enum NextActions {
    /// One sampled action per transition.
    Sampled(Vec<usize>),
    /// Exact expectation over `pi(.|s')`.
    Expected,
}

impl NextActions {
    /// Draws one on-policy next action per transition of `dataset`.
    pub fn sample<R: Rng + ?Sized>(mdp: &FiniteMdp, dataset: &Dataset, policy: &Policy, rng: &mut R) -> Self {
        NextActions::Sampled(
            dataset
                .transitions
                .iter()
                .map(|t| policy.sample_action(mdp.observe(t.s_next), rng))
                .collect(),
        )
    }

    /// `(a', weight)` pairs for transition `i` landing in `s_next`.
    fn weights(&self, i: usize, probs: &[f64]) -> Vec<(usize, f64)> {
        match self {
            NextActions::Sampled(v) => vec![(v[i], 1.0)],
            NextActions::Expected => probs.iter().copied().enumerate().filter(|&(_, p)| p > 0.0).collect(),
        }
    }
}

fn check_nonempty(dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    Ok(())
}

/// Sample `A` and `b = E[phi r]` over a dataset.
pub fn estimate_a_b(
    mdp: &FiniteMdp,
    dataset: &Dataset,
    features: &FeatureMap,
    policy: &Policy,
    next: &NextActions,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_nonempty(dataset)?;
    features.check_compatible(mdp)?;
    let nf = features.n_features;
    let mut a_hat = DMatrix::zeros(nf, nf);
    let mut b_hat = DVector::zeros(nf);
    let mut diff = vec![0.0; nf];
    for (i, tr) in dataset.transitions.iter().enumerate() {
        let phi = features.row(tr.s, tr.a);
        diff.copy_from_slice(phi);
        if !mdp.is_terminal(tr.s_next) {
            let probs = policy.probs(mdp.observe(tr.s_next));
            for (ap, w) in next.weights(i, &probs) {
                let phin = features.row(tr.s_next, ap);
                for k in 0..nf {
                    diff[k] -= mdp.gamma * w * phin[k];
                }
            }
        }
        for r in 0..nf {
            if phi[r] == 0.0 {
                continue;
            }
            b_hat[r] += phi[r] * tr.r;
            for c in 0..nf {
                a_hat[(r, c)] += phi[r] * diff[c];
            }
        }
    }
    let n = dataset.len() as f64;
    Ok((a_hat / n, b_hat / n))
}

/// Sample `B = (gamma / N) sum phi_i q(s'_i, a'_i) score(s'_i, a'_i)^T`
/// with `q_table` indexed by flattened state-action pairs.
pub fn estimate_b_matrix(
    mdp: &FiniteMdp,
    dataset: &Dataset,
    features: &FeatureMap,
    policy: &Policy,
    q_table: &DVector<f64>,
    next: &NextActions,
) -> Result<DMatrix<f64>> {
    check_nonempty(dataset)?;
    let nf = features.n_features;
    let np = policy.n_params();
    let mut b = DMatrix::zeros(nf, np);
    let mut score = vec![0.0; np];
    let mut acc = vec![0.0; np];
    for (i, tr) in dataset.transitions.iter().enumerate() {
        if mdp.is_terminal(tr.s_next) {
            continue;
        }
        let obs = mdp.observe(tr.s_next);
        let probs = policy.probs(obs);
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (ap, w) in next.weights(i, &probs) {
            policy.score_into(obs, ap, &mut score);
            let qv = w * q_table[mdp.sa(tr.s_next, ap)];
            for k in 0..np {
                acc[k] += qv * score[k];
            }
        }
        let phi = features.row(tr.s, tr.a);
        for r in 0..nf {
            if phi[r] == 0.0 {
                continue;
            }
            for k in 0..np {
                b[(r, k)] += phi[r] * acc[k];
            }
        }
    }
    Ok(b * (mdp.gamma / dataset.len() as f64))
}

/// Value-critic weights from `A w = b`.
pub fn lstd_value(a_hat: &DMatrix<f64>, b_hat: &DVector<f64>) -> Result<Solved> {
    let rhs = DMatrix::from_column_slice(b_hat.len(), 1, b_hat.as_slice());
    linalg::solve_td_system(a_hat, &rhs, "value critic")
}

/// Gradient-critic weights from `A G = B`.
pub fn lstd_gamma(a_hat: &DMatrix<f64>, b_matrix: &DMatrix<f64>) -> Result<Solved> {
    linalg::solve_td_system(a_hat, b_matrix, "gradient critic")
}

/// Fitted critics together with the systems that produced them.
#[derive(Clone, Debug, Serialize)]
pub struct LstdSolution {
    pub omega: DVector<f64>,
    pub g_matrix: DMatrix<f64>,
    /// System matrix on the value features.
    pub c_hat: DMatrix<f64>,
    /// System matrix on the gradient features.
    pub a_hat: DMatrix<f64>,
    pub b_hat: DVector<f64>,
    pub b_matrix: DMatrix<f64>,
    /// Reciprocal condition of the gradient system (after dropping
    /// decoupled unknowns).
    pub condition_a: f64,
    pub regularized: bool,
}

impl LstdSolution {
    /// Value critic evaluated on every state-action pair.
    pub fn q_table(&self, value_features: &FeatureMap) -> DVector<f64> {
        value_features.matrix() * &self.omega
    }

    /// Gradient critic evaluated on every state-action pair.
    pub fn gamma_table(&self, grad_features: &FeatureMap) -> DMatrix<f64> {
        grad_features.matrix() * &self.g_matrix
    }
}

/// Gradient critic fitted against a fixed action-value table.
#[derive(Clone, Debug, Serialize)]
pub struct GammaFit {
    pub g_matrix: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    pub b_matrix: DMatrix<f64>,
    pub condition_a: f64,
    pub regularized: bool,
}

fn same_features(a: &FeatureMap, b: &FeatureMap) -> bool {
    std::ptr::eq(a, b) || a == b
}

/// Both critics from a dataset. One on-policy next action is sampled per
/// transition and reused by both systems unless `expected` is set.
pub fn fit_sample<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    dataset: &Dataset,
    value_features: &FeatureMap,
    grad_features: &FeatureMap,
    policy: &Policy,
    expected: bool,
    rng: &mut R,
) -> Result<LstdSolution> {
    let next = if expected {
        NextActions::Expected
    } else {
        NextActions::sample(mdp, dataset, policy, rng)
    };
    fit_with_next(mdp, dataset, value_features, grad_features, policy, &next)
}

pub fn fit_with_next(
    mdp: &FiniteMdp,
    dataset: &Dataset,
    value_features: &FeatureMap,
    grad_features: &FeatureMap,
    policy: &Policy,
    next: &NextActions,
) -> Result<LstdSolution> {
    grad_features.check_compatible(mdp)?;
    let (c_hat, b_hat) = estimate_a_b(mdp, dataset, value_features, policy, next)?;
    let omega = lstd_value(&c_hat, &b_hat)?;
    let omega = omega.x.column(0).into_owned();
    let q_table = value_features.matrix() * &omega;
    let a_hat = if same_features(value_features, grad_features) {
        c_hat.clone()
    } else {
        estimate_a_b(mdp, dataset, grad_features, policy, next)?.0
    };
    let b_matrix = estimate_b_matrix(mdp, dataset, grad_features, policy, &q_table, next)?;
    let g = lstd_gamma(&a_hat, &b_matrix)?;
    Ok(LstdSolution {
        omega,
        g_matrix: g.x,
        c_hat,
        a_hat,
        b_hat,
        b_matrix,
        condition_a: g.rcond,
        regularized: g.regularized,
    })
}

/// Exact-expectation ingredients under the behavior occupancy `D`.
pub struct PopulationModel {
    /// Behavior state-action occupancy (diagonal of `D`).
    pub d: DVector<f64>,
    /// `P^pi` with columns into terminal states zeroed.
    pub p_next: DMatrix<f64>,
    pub scores: DMatrix<f64>,
    pub reward: DVector<f64>,
    pub gamma: f64,
}

impl PopulationModel {
    pub fn new(mdp: &FiniteMdp, behavior: &Policy, policy: &Policy) -> Result<Self> {
        let d = oracle::discounted_distributions(mdp, behavior)?.d_sa;
        Ok(Self::with_occupancy(mdp, policy, d))
    }

    pub fn with_occupancy(mdp: &FiniteMdp, policy: &Policy, d: DVector<f64>) -> Self {
        let mut p_next = oracle::sa_transition(mdp, policy);
        for s in (0..mdp.n_states).filter(|&s| mdp.is_terminal(s)) {
            for a in 0..mdp.n_actions {
                p_next.column_mut(mdp.sa(s, a)).fill(0.0);
            }
        }
        PopulationModel {
            d,
            p_next,
            scores: oracle::score_matrix(mdp, policy),
            reward: DVector::from_column_slice(mdp.reward_vector()),
            gamma: mdp.gamma,
        }
    }

    fn d_phi_t(&self, phi: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = phi.transpose();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col *= self.d[j];
        }
        out
    }

    /// `Phi^T D (Phi - gamma P Phi)`.
    pub fn a_matrix(&self, features: &FeatureMap) -> DMatrix<f64> {
        let phi = features.matrix();
        let next = &self.p_next * &phi * self.gamma;
        self.d_phi_t(&phi) * (phi - next)
    }

    /// `Phi^T D r`.
    pub fn b_vector(&self, features: &FeatureMap) -> DVector<f64> {
        self.d_phi_t(&features.matrix()) * &self.reward
    }

    /// `gamma Phi^T D P (S ⊙ q)`.
    pub fn b_matrix(&self, features: &FeatureMap, q_table: &DVector<f64>) -> DMatrix<f64> {
        let sq = oracle::weighted_scores(&self.scores, q_table);
        self.d_phi_t(&features.matrix()) * (&self.p_next * sq) * self.gamma
    }
}

/// Population TD fixed points of both critics, the gradient critic being
/// fed the TD value critic.
pub fn population_fixed_point(
    mdp: &FiniteMdp,
    behavior: &Policy,
    policy: &Policy,
    value_features: &FeatureMap,
    grad_features: &FeatureMap,
) -> Result<LstdSolution> {
    let model = PopulationModel::new(mdp, behavior, policy)?;
    population_from_model(&model, value_features, grad_features)
}

pub fn population_from_model(
    model: &PopulationModel,
    value_features: &FeatureMap,
    grad_features: &FeatureMap,
) -> Result<LstdSolution> {
    let c_hat = model.a_matrix(value_features);
    let b_hat = model.b_vector(value_features);
    let omega = lstd_value(&c_hat, &b_hat)?.x.column(0).into_owned();
    let q_table = value_features.matrix() * &omega;
    let a_hat = if same_features(value_features, grad_features) {
        c_hat.clone()
    } else {
        model.a_matrix(grad_features)
    };
    let b_matrix = model.b_matrix(grad_features, &q_table);
    let g = lstd_gamma(&a_hat, &b_matrix)?;
    Ok(LstdSolution {
        omega,
        g_matrix: g.x,
        c_hat,
        a_hat,
        b_hat,
        b_matrix,
        condition_a: g.rcond,
        regularized: g.regularized,
    })
}

/// Population gradient critic fed a fixed action-value table (typically the
/// true `q`).
pub fn population_fixed_point_with_q(
    mdp: &FiniteMdp,
    behavior: &Policy,
    policy: &Policy,
    grad_features: &FeatureMap,
    q_table: &DVector<f64>,
) -> Result<GammaFit> {
    let model = PopulationModel::new(mdp, behavior, policy)?;
    let a_hat = model.a_matrix(grad_features);
    let b_matrix = model.b_matrix(grad_features, q_table);
    let g = lstd_gamma(&a_hat, &b_matrix)?;
    Ok(GammaFit {
        g_matrix: g.x,
        a_hat,
        b_matrix,
        condition_a: g.rcond,
        regularized: g.regularized,
    })
}

/// Max-abs gap between central finite differences of the population value
/// critic `omega_TD(theta)` and the gradient critic `G_TD`, with shared
/// features and the sampling occupancy held fixed.
pub fn lemma2_check(
    mdp: &FiniteMdp,
    behavior: &Policy,
    policy: &Policy,
    features: &FeatureMap,
    h: f64,
) -> Result<f64> {
    let d = oracle::discounted_distributions(mdp, behavior)?.d_sa;
    let omega_at = |theta: &[f64]| -> Result<DVector<f64>> {
        let mut p = policy.clone();
        p.theta.copy_from_slice(theta);
        let model = PopulationModel::with_occupancy(mdp, &p, d.clone());
        let c = model.a_matrix(features);
        Ok(lstd_value(&c, &model.b_vector(features))?.x.column(0).into_owned())
    };
    let model = PopulationModel::with_occupancy(mdp, policy, d.clone());
    let sol = population_from_model(&model, features, features)?;
    let mut worst: f64 = 0.0;
    let mut theta = policy.theta.clone();
    for k in 0..policy.n_params() {
        let base = theta[k];
        theta[k] = base + h;
        let hi = omega_at(&theta)?;
        theta[k] = base - h;
        let lo = omega_at(&theta)?;
        theta[k] = base;
        let fd = (hi - lo) / (2.0 * h);
        worst = worst.max((fd - sol.g_matrix.column(k)).amax());
    }
    Ok(worst)
}

/// Matrix least-squares TD fixed point on an abstract chain:
/// `H = (Phi^T D (Phi - gamma P Phi))^{-1} Phi^T D C`.
pub fn generalized_ls(
    transition: &DMatrix<f64>,
    d: &DVector<f64>,
    c_matrix: &DMatrix<f64>,
    features: &DMatrix<f64>,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    let n = transition.nrows();
    if transition.ncols() != n || d.len() != n || c_matrix.nrows() != n || features.nrows() != n {
        return Err(Error::Shape(format!(
            "generalized least squares over {n} points: inconsistent inputs"
        )));
    }
    let mut dphi_t = features.transpose();
    for (j, mut col) in dphi_t.column_iter_mut().enumerate() {
        col *= d[j];
    }
    let a = &dphi_t * (features - transition * features * gamma);
    let rhs = dphi_t * c_matrix;
    linalg::solve(&a, &rhs, "generalized least squares")
}
