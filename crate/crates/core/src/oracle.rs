//! Exact dynamic-programming quantities on finite MDPs.
//!
//! `P^pi` is the state-action transition matrix
//! `P^pi[(s,a),(s',a')] = p(s'|s,a) pi(a'|observe(s'))`; terminal rows self-loop
//! with zero reward so every quantity below is defined by a plain linear
//! solve.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::lstd;
use crate::mdp::{FeatureMap, FiniteMdp};
use crate::policy::Policy;

const STATIONARY_TOL: f64 = 1e-14;
const STATIONARY_MAX_ITERS: usize = 1_000_000;
const PROJECTION_RCOND: f64 = 1e-10;

/// `pi(a | observe(s))` flattened over state-action pairs.
pub fn action_probs(mdp: &FiniteMdp, policy: &Policy) -> DVector<f64> {
    let mut out = DVector::zeros(mdp.n_sa());
    for s in 0..mdp.n_states {
        let p = policy.probs(mdp.observe(s));
        for a in 0..mdp.n_actions {
            out[mdp.sa(s, a)] = p[a];
        }
    }
    out
}

/// Rows are `grad log pi(a | observe(s))` for every state-action pair.
pub fn score_matrix(mdp: &FiniteMdp, policy: &Policy) -> DMatrix<f64> {
    let np = policy.n_params();
    let mut out = DMatrix::zeros(mdp.n_sa(), np);
    let mut buf = vec![0.0; np];
    for s in 0..mdp.n_states {
        let obs = mdp.observe(s);
        for a in 0..mdp.n_actions {
            policy.score_into(obs, a, &mut buf);
            let i = mdp.sa(s, a);
            for k in 0..np {
                out[(i, k)] = buf[k];
            }
        }
    }
    out
}

/// State-action transition matrix under `policy`.
pub fn sa_transition(mdp: &FiniteMdp, policy: &Policy) -> DMatrix<f64> {
    let pi = action_probs(mdp, policy);
    let (n, m) = (mdp.n_states, mdp.n_actions);
    let mut p = DMatrix::zeros(n * m, n * m);
    for s in 0..n {
        for a in 0..m {
            let row = mdp.sa(s, a);
            for (sp, &prob) in mdp.next_dist(s, a).iter().enumerate() {
                if prob == 0.0 {
                    continue;
                }
                for ap in 0..m {
                    p[(row, mdp.sa(sp, ap))] = prob * pi[mdp.sa(sp, ap)];
                }
            }
        }
    }
    p
}

/// State transition matrix `P_s[s, s'] = sum_a pi(a|s) p(s'|s,a)`.
pub fn state_transition(mdp: &FiniteMdp, policy: &Policy) -> DMatrix<f64> {
    let n = mdp.n_states;
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        let pr = policy.probs(mdp.observe(s));
        for a in 0..mdp.n_actions {
            for (sp, &prob) in mdp.next_dist(s, a).iter().enumerate() {
                p[(s, sp)] += pr[a] * prob;
            }
        }
    }
    p
}

/// Start distribution over state-action pairs, `mu0(s) pi(a|observe(s))`.
pub fn start_sa(mdp: &FiniteMdp, policy: &Policy) -> DVector<f64> {
    let pi = action_probs(mdp, policy);
    DVector::from_fn(mdp.n_sa(), |i, _| mdp.mu0[i / mdp.n_actions] * pi[i])
}

fn resolvent_system(mdp: &FiniteMdp, p: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::identity(p.nrows(), p.ncols()) - p * mdp.gamma
}

/// Action values: `(I - gamma P^pi) q = r`.
pub fn q_values(mdp: &FiniteMdp, policy: &Policy) -> Result<DVector<f64>> {
    policy.check_compatible(mdp)?;
    let p = sa_transition(mdp, policy);
    let r = DVector::from_column_slice(mdp.reward_vector());
    linalg::solve_vec(&resolvent_system(mdp, &p), &r, "action values")
}

/// Normalized discounted return `(1 - gamma) sum mu0 pi q`.
pub fn return_j(mdp: &FiniteMdp, policy: &Policy) -> Result<f64> {
    let q = q_values(mdp, policy)?;
    Ok((1.0 - mdp.gamma) * start_sa(mdp, policy).dot(&q))
}

/// `S ⊙ q`: score rows scaled by the matching action value.
pub fn weighted_scores(scores: &DMatrix<f64>, q: &DVector<f64>) -> DMatrix<f64> {
    let mut out = scores.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= q[i];
    }
    out
}

/// Gradient critic `grad_theta Q`: `(I - gamma P) Gamma = gamma P (S ⊙ q)`.
pub fn true_gamma(mdp: &FiniteMdp, policy: &Policy) -> Result<DMatrix<f64>> {
    let p = sa_transition(mdp, policy);
    let q = q_values(mdp, policy)?;
    let sq = weighted_scores(&score_matrix(mdp, policy), &q);
    let rhs = &p * sq * mdp.gamma;
    linalg::solve(&resolvent_system(mdp, &p), &rhs, "gradient critic")
}

/// Unrolled gradient critic `sum_{t>=1} gamma^t P^t (S ⊙ q)`, truncated once
/// `gamma^t < tol`.
pub fn unrolled_gamma(mdp: &FiniteMdp, policy: &Policy, tol: f64) -> Result<DMatrix<f64>> {
    let p = sa_transition(mdp, policy);
    let q = q_values(mdp, policy)?;
    let mut term = weighted_scores(&score_matrix(mdp, policy), &q);
    let mut acc = DMatrix::zeros(term.nrows(), term.ncols());
    let mut w = 1.0;
    loop {
        w *= mdp.gamma;
        if w < tol {
            break;
        }
        term = &p * term;
        acc += &term * w;
    }
    Ok(acc)
}

/// Discounted state visitation `mu0^T (I - gamma P_s)^{-1}` (unnormalized,
/// total mass `1 / (1 - gamma)`).
pub fn discounted_visitation(mdp: &FiniteMdp, policy: &Policy) -> Result<DVector<f64>> {
    let ps = state_transition(mdp, policy);
    let a = resolvent_system(mdp, &ps).transpose();
    let mu0 = DVector::from_column_slice(&mdp.mu0);
    linalg::solve_vec(&a, &mu0, "discounted visitation")
}

/// Unnormalized policy gradient from the policy-gradient theorem:
/// `sum_s d(s) sum_a pi(a|s) q(s,a) grad log pi(a|s)` with `d` the
/// discounted visitation.
pub fn true_policy_gradient(mdp: &FiniteMdp, policy: &Policy) -> Result<DVector<f64>> {
    let d = discounted_visitation(mdp, policy)?;
    let q = q_values(mdp, policy)?;
    let pi = action_probs(mdp, policy);
    let scores = score_matrix(mdp, policy);
    let w = DVector::from_fn(mdp.n_sa(), |i, _| d[i / mdp.n_actions] * pi[i] * q[i]);
    Ok(scores.transpose() * w)
}

/// `grad J` of the normalized objective, i.e. `(1 - gamma)` times
/// [`true_policy_gradient`].
pub fn normalized_policy_gradient(mdp: &FiniteMdp, policy: &Policy) -> Result<DVector<f64>> {
    Ok(true_policy_gradient(mdp, policy)? * (1.0 - mdp.gamma))
}

/// Start-state form `sum mu0 pi (q score + Gamma)` for a given critic pair.
pub fn start_state_form(
    mdp: &FiniteMdp,
    policy: &Policy,
    q: &DVector<f64>,
    gamma_matrix: &DMatrix<f64>,
) -> DVector<f64> {
    let x0 = start_sa(mdp, policy);
    let g = weighted_scores(&score_matrix(mdp, policy), q) + gamma_matrix;
    g.transpose() * x0
}

/// Exact return, action values, gradient critic and gradient in one bundle.
#[derive(Clone, Debug, Serialize)]
pub struct OracleGradients {
    #[serde(serialize_with = "linalg::ser_vec")]
    pub q: DVector<f64>,
    /// Rows indexed by state-action pair, columns by policy parameter.
    #[serde(serialize_with = "linalg::ser_rows")]
    pub gamma_matrix: DMatrix<f64>,
    #[serde(serialize_with = "linalg::ser_vec")]
    pub grad_j: DVector<f64>,
    pub j: f64,
}

impl OracleGradients {
    pub fn compute(mdp: &FiniteMdp, policy: &Policy) -> Result<Self> {
        let q = q_values(mdp, policy)?;
        let gamma_matrix = true_gamma(mdp, policy)?;
        let grad_j = true_policy_gradient(mdp, policy)?;
        let j = (1.0 - mdp.gamma) * start_sa(mdp, policy).dot(&q);
        Ok(OracleGradients {
            q,
            gamma_matrix,
            grad_j,
            j,
        })
    }
}

/// Max-abs residual of `q = r + gamma P q`.
pub fn bellman_residual(mdp: &FiniteMdp, policy: &Policy, q: &DVector<f64>) -> f64 {
    let p = sa_transition(mdp, policy);
    let r = DVector::from_column_slice(mdp.reward_vector());
    (r + &p * q * mdp.gamma - q).amax()
}

/// Max-abs residual of `Gamma = gamma P (S ⊙ q + Gamma)`.
pub fn gradient_bellman_residual(
    mdp: &FiniteMdp,
    policy: &Policy,
    q: &DVector<f64>,
    gamma_matrix: &DMatrix<f64>,
) -> f64 {
    let p = sa_transition(mdp, policy);
    let sq = weighted_scores(&score_matrix(mdp, policy), q);
    linalg::max_abs(&(&p * (sq + gamma_matrix) * mdp.gamma - gamma_matrix))
}

/// Exact expectation of `sum_{t<n} gamma^t g_t + gamma^{n-1} Gamma_{n-1}`
/// along on-policy trajectories from `mu0`, where
/// `g_t = q(S_t,A_t) score(S_t,A_t)` and `Gamma_t` is evaluated at
/// `(S_t, A_t)` with true-critic semantics shifted by one step. See
/// [`n_step_terms`].
pub fn n_step_gradient(mdp: &FiniteMdp, policy: &Policy, n: usize) -> Result<DVector<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n-step horizon must be at least 1".into()));
    }
    let (y, z) = n_step_terms(mdp, policy, n)?;
    let mut acc = DVector::zeros(policy.n_params());
    let mut w = 1.0;
    for t in 0..n {
        acc += &y[t] * w;
        if t + 1 < n {
            w *= mdp.gamma;
        }
    }
    Ok(acc + &z[n - 1] * w)
}

/// Per-step expectations `y_t = E[q score]` and `z_t = E[Gamma]` under the
/// on-policy state-action distribution after `t` steps, for `t < horizon`.
pub fn n_step_terms(
    mdp: &FiniteMdp,
    policy: &Policy,
    horizon: usize,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let p = sa_transition(mdp, policy);
    let q = q_values(mdp, policy)?;
    let gm = true_gamma(mdp, policy)?;
    let g = weighted_scores(&score_matrix(mdp, policy), &q);
    let gt = g.transpose();
    let gmt = gm.transpose();
    let pt = p.transpose();
    let mut x = start_sa(mdp, policy);
    let mut ys = Vec::with_capacity(horizon);
    let mut zs = Vec::with_capacity(horizon);
    for t in 0..horizon {
        if t > 0 {
            x = &pt * x;
        }
        ys.push(&gt * &x);
        zs.push(&gmt * &x);
    }
    Ok((ys, zs))
}

/// Exact expectation of the lambda-weighted estimator
/// `sum_n (lambda gamma)^n (y_n + (1 - lambda) z_n)`, truncated once
/// `(lambda gamma)^n` and `gamma^n` are both below `tol`.
pub fn trace_gradient(mdp: &FiniteMdp, policy: &Policy, lambda: f64, tol: f64) -> Result<DVector<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    let lg = lambda * mdp.gamma;
    let horizon = if lg == 0.0 {
        1
    } else {
        (tol.ln() / lg.ln()).ceil() as usize + 1
    };
    let (y, z) = n_step_terms(mdp, policy, horizon)?;
    let mut acc = DVector::zeros(policy.n_params());
    let mut w = 1.0;
    for t in 0..horizon {
        acc += (&y[t] + &z[t] * (1.0 - lambda)) * w;
        w *= lg;
    }
    Ok(acc)
}

/// State and state-action distributions of a policy.
#[derive(Clone, Debug, Serialize)]
pub struct OccupancyBundle {
    /// Long-run state distribution of the restart chain (episodes that hit a
    /// terminal state restart from `mu0`).
    #[serde(serialize_with = "linalg::ser_vec")]
    pub mu_t_limit: DVector<f64>,
    /// Normalized discounted state distribution.
    #[serde(serialize_with = "linalg::ser_vec")]
    pub mu_gamma: DVector<f64>,
    /// `mu_t_limit(s) pi(a | observe(s))`.
    #[serde(serialize_with = "linalg::ser_vec")]
    pub d_sa: DVector<f64>,
    /// False when the restart chain has several closed classes; the
    /// long-run distribution is then the Cesàro limit from `mu0`.
    pub unique: bool,
}

/// State chain in which entering a terminal state restarts from `mu0`.
pub fn restart_chain(mdp: &FiniteMdp, policy: &Policy) -> DMatrix<f64> {
    let n = mdp.n_states;
    let ps = state_transition(mdp, policy);
    let mut out = DMatrix::zeros(n, n);
    for s in 0..n {
        if mdp.is_terminal(s) {
            for sp in 0..n {
                out[(s, sp)] = mdp.mu0[sp];
            }
            continue;
        }
        for sp in 0..n {
            let p = ps[(s, sp)];
            if mdp.is_terminal(sp) {
                for k in 0..n {
                    out[(s, k)] += p * mdp.mu0[k];
                }
            } else {
                out[(s, sp)] += p;
            }
        }
    }
    out
}

fn closed_class_count(p: &DMatrix<f64>) -> usize {
    let n = p.nrows();
    let mut reach = vec![vec![false; n]; n];
    for (s, row) in reach.iter_mut().enumerate() {
        let mut stack = vec![s];
        row[s] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if p[(u, v)] > 0.0 && !row[v] {
                    row[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    let recurrent: Vec<usize> = (0..n)
        .filter(|&s| (0..n).all(|v| !reach[s][v] || reach[v][s]))
        .collect();
    let mut seen = vec![false; n];
    let mut classes = 0;
    for &s in &recurrent {
        if seen[s] {
            continue;
        }
        classes += 1;
        for v in 0..n {
            if reach[s][v] {
                seen[v] = true;
            }
        }
    }
    classes
}

/// Long-run distribution of a row-stochastic matrix, started from `init`.
/// Returns the distribution and whether it is unique.
pub fn stationary_distribution(p: &DMatrix<f64>, init: &[f64]) -> Result<(DVector<f64>, bool)> {
    let n = p.nrows();
    if closed_class_count(p) == 1 {
        let mut a = (DMatrix::identity(n, n) - p).transpose();
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        let mut mu = linalg::solve_vec(&a, &rhs, "stationary distribution")?;
        mu.iter_mut().for_each(|v| *v = v.max(0.0));
        let total = mu.sum();
        return Ok((mu / total, true));
    }
    // Lazy chain: same invariant measures, aperiodic.
    let lazy = (DMatrix::identity(n, n) + p) * 0.5;
    let lt = lazy.transpose();
    let mut mu = DVector::from_column_slice(init);
    for _ in 0..STATIONARY_MAX_ITERS {
        let next = &lt * &mu;
        let delta = (&next - &mu).amax();
        mu = next;
        if delta < STATIONARY_TOL {
            break;
        }
    }
    Ok((mu, false))
}

/// Long-run, discounted and state-action distributions of `policy`.
pub fn discounted_distributions(mdp: &FiniteMdp, policy: &Policy) -> Result<OccupancyBundle> {
    let (mu, unique) = stationary_distribution(&restart_chain(mdp, policy), &mdp.mu0)?;
    let mu_gamma = discounted_visitation(mdp, policy)? * (1.0 - mdp.gamma);
    let pi = action_probs(mdp, policy);
    let d_sa = DVector::from_fn(mdp.n_sa(), |i, _| mu[i / mdp.n_actions] * pi[i]);
    Ok(OccupancyBundle {
        mu_t_limit: mu,
        mu_gamma,
        d_sa,
        unique,
    })
}

/// Expected state-action frequencies of a dataset collected with
/// truncation at `episode_len` steps (terminal entry also ends the episode).
pub fn episodic_occupancy(mdp: &FiniteMdp, behavior: &Policy, episode_len: usize) -> DVector<f64> {
    let ps = state_transition(mdp, behavior);
    let pi = action_probs(mdp, behavior);
    let n = mdp.n_states;
    let mut alive = DVector::from_column_slice(&mdp.mu0);
    let mut visits = DVector::zeros(n);
    for _ in 0..episode_len {
        visits += &alive;
        let mut next = ps.transpose() * &alive;
        for s in 0..n {
            if mdp.is_terminal(s) {
                next[s] = 0.0;
            }
        }
        alive = next;
        if alive.amax() == 0.0 {
            break;
        }
    }
    let total = visits.sum();
    DVector::from_fn(mdp.n_sa(), |i, _| visits[i / mdp.n_actions] * pi[i] / total)
}

/// Distribution-mismatch ratio `max h / min h`,
/// `h(s,a) = sqrt(mu(s) pi(a|s) / (mu_b(s) b(a|s)))`, over pairs where
/// either occupancy is positive.
pub fn kappa(mdp: &FiniteMdp, policy: &Policy, behavior: &Policy) -> Result<f64> {
    let target = discounted_distributions(mdp, policy)?.d_sa;
    let beh = discounted_distributions(mdp, behavior)?.d_sa;
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    for i in 0..mdp.n_sa() {
        let (t, b) = (target[i], beh[i]);
        if t == 0.0 && b == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(Error::ZeroSupport {
                state: i / mdp.n_actions,
                action: i % mdp.n_actions,
            });
        }
        let h = (t / b).sqrt();
        hi = hi.max(h);
        lo = lo.min(h);
    }
    if lo == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(hi / lo)
}

/// Weighted norm `sqrt(sum_i d_i |row_i|^2)`.
pub fn d_norm(d: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .zip(d.iter())
        .map(|(row, &w)| w * row.norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// `d`-weighted projection of `target` onto the span of `features` and the
/// distance `|projected - target|_d`.
pub fn weighted_projection(
    features: &FeatureMap,
    d: &DVector<f64>,
    target: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, f64)> {
    let phi = features.matrix();
    if phi.nrows() != d.len() || target.nrows() != d.len() {
        return Err(Error::Shape(format!(
            "projection: {} feature rows, {} weights, {} target rows",
            phi.nrows(),
            d.len(),
            target.nrows()
        )));
    }
    let mut dphi = phi.clone();
    for (i, mut row) in dphi.row_iter_mut().enumerate() {
        row *= d[i];
    }
    let gram = phi.transpose() * &dphi;
    let rhs = dphi.transpose() * target;
    let coef = linalg::solve_full_rank(&gram, &rhs, PROJECTION_RCOND, "weighted projection").map_err(
        |e| match e {
            Error::Singular { rcond, .. } => Error::RankDeficient { rcond },
            other => other,
        },
    )?;
    let projected = phi * coef;
    let err = d_norm(d, &(&projected - target));
    Ok((projected, err))
}

/// Both sides of the error bounds for the TD gradient critic.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    /// `|Phi G - grad Q|_D` with the critic fed the true action values.
    pub lhs_true_q: f64,
    /// `|Phi G - grad Q|_D` with the critic fed the TD value critic.
    pub lhs_td: f64,
    /// Best achievable `|Phi G - grad Q|_D` over the gradient features.
    pub grad_projection_error: f64,
    /// Best achievable `|Phi w - q|_D` over the value features.
    pub value_projection_error: f64,
    pub kappa: f64,
    pub b: f64,
    pub gamma: f64,
    pub n_params: usize,
    /// `(1 + gamma kappa) / (1 - gamma)` times the gradient projection error.
    pub rhs_true_q: f64,
    /// Same with the constant `(1 - gamma kappa) / (1 - gamma)`.
    pub rhs_true_q_alt: f64,
    pub rhs_td: f64,
    pub true_q_holds: bool,
    pub td_holds: bool,
    /// Whether `behavior == policy` in the sense of identical action
    /// probabilities, under which the bounds are guaranteed.
    pub on_policy: bool,
}

pub fn bound_report(
    mdp: &FiniteMdp,
    policy: &Policy,
    behavior: &Policy,
    value_features: &FeatureMap,
    grad_features: &FeatureMap,
) -> Result<BoundReport> {
    let oracle = OracleGradients::compute(mdp, policy)?;
    let d = discounted_distributions(mdp, behavior)?.d_sa;
    let k = kappa(mdp, policy, behavior)?;
    let b = policy.score_infinity_bound(mdp);
    let g = mdp.gamma;
    let np = policy.n_params();

    let with_q = lstd::population_fixed_point_with_q(mdp, behavior, policy, grad_features, &oracle.q)?;
    let td = lstd::population_fixed_point(mdp, behavior, policy, value_features, grad_features)?;
    let phi = grad_features.matrix();
    let lhs_true_q = d_norm(&d, &(&phi * &with_q.g_matrix - &oracle.gamma_matrix));
    let lhs_td = d_norm(&d, &(&phi * &td.g_matrix - &oracle.gamma_matrix));

    let (_, grad_projection_error) = weighted_projection(grad_features, &d, &oracle.gamma_matrix)?;
    let q_col = DMatrix::from_column_slice(oracle.q.len(), 1, oracle.q.as_slice());
    let (_, value_projection_error) = weighted_projection(value_features, &d, &q_col)?;

    let rhs_true_q = (1.0 + g * k) / (1.0 - g) * grad_projection_error;
    let rhs_true_q_alt = (1.0 - g * k) / (1.0 - g) * grad_projection_error;
    let rhs_td = rhs_true_q
        + g * np as f64 * b * k * (1.0 + g * k).powi(2) / (1.0 - g).powi(2) * value_projection_error;
    let slack = 1e-10;
    let on_policy = action_probs(mdp, policy)
        .iter()
        .zip(action_probs(mdp, behavior).iter())
        .all(|(x, y)| (x - y).abs() < 1e-15);
    Ok(BoundReport {
        lhs_true_q,
        lhs_td,
        grad_projection_error,
        value_projection_error,
        kappa: k,
        b,
        gamma: g,
        n_params: np,
        rhs_true_q,
        rhs_true_q_alt,
        rhs_td,
        true_q_holds: lhs_true_q <= rhs_true_q + slack,
        td_holds: lhs_td <= rhs_td + slack,
        on_policy,
    })
}
