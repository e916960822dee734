//! Online TD with regularized correction (TDRC) for the value critic and
//! the gradient critic, and the actor loop that interleaves both with
//! policy updates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::AdamState;
use crate::lstd::PopulationModel;
use crate::mdp::{FeatureMap, FiniteMdp};
use crate::oracle;
use crate::policy::Policy;
use crate::rng::sample_categorical;

/// Parameters larger than this in magnitude count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Value critic `omega` with correction weights `chi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdrcValueState {
    pub omega: DVector<f64>,
    pub chi: DVector<f64>,
    pub alpha: f64,
    pub beta_reg: f64,
}

impl TdrcValueState {
    pub fn new(n_features: usize, alpha: f64, beta_reg: f64) -> Self {
        TdrcValueState {
            omega: DVector::zeros(n_features),
            chi: DVector::zeros(n_features),
            alpha,
            beta_reg,
        }
    }

    /// One TDRC update from `(phi, r, phi')`; pass a zero `phi_next` for
    /// terminal successors.
    pub fn step(&mut self, phi: &[f64], phi_next: &[f64], r: f64, gamma: f64) -> Result<()> {
        let (alpha, beta) = (self.alpha, self.beta_reg);
        let delta = r + gamma * dot(phi_next, self.omega.as_slice()) - dot(phi, self.omega.as_slice());
        let phi_chi = dot(phi, self.chi.as_slice());
        // omega uses the correction weights from before this step
        for (i, (&p, &pn)) in phi.iter().zip(phi_next).enumerate() {
            if p != 0.0 || pn != 0.0 {
                self.omega[i] += alpha * p * delta - alpha * gamma * pn * phi_chi;
            }
        }
        let shrink = 1.0 - alpha * beta;
        for (i, &p) in phi.iter().enumerate() {
            self.chi[i] = shrink * self.chi[i] + alpha * p * (delta - phi_chi);
        }
        if !delta.is_finite() {
            return Err(Error::NonFinite("value critic".into()));
        }
        Ok(())
    }

    /// Value estimate for a feature row.
    pub fn value(&self, phi: &[f64]) -> f64 {
        dot(phi, self.omega.as_slice())
    }
}

/// Gradient critic `G` with correction matrix `H`, both `n_features x n_params`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdrcGammaState {
    pub g_matrix: DMatrix<f64>,
    pub h_matrix: DMatrix<f64>,
    pub alpha: f64,
    pub beta_reg: f64,
}

impl TdrcGammaState {
    pub fn new(n_features: usize, n_params: usize, alpha: f64, beta_reg: f64) -> Self {
        TdrcGammaState {
            g_matrix: DMatrix::zeros(n_features, n_params),
            h_matrix: DMatrix::zeros(n_features, n_params),
            alpha,
            beta_reg,
        }
    }

    /// `phi^T M` skipping zero feature entries.
    fn row_combination(m: &DMatrix<f64>, phi: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &p) in phi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (k, o) in out.iter_mut().enumerate() {
                *o += p * m[(i, k)];
            }
        }
    }

    /// Gradient critic estimate for a feature row.
    pub fn gamma_row(&self, phi: &[f64], out: &mut [f64]) {
        Self::row_combination(&self.g_matrix, phi, out);
    }

    /// One vector-valued TDRC update with
    /// `eps = gamma q' score' + gamma G^T phi' - G^T phi`.
    pub fn step(
        &mut self,
        phi: &[f64],
        phi_next: &[f64],
        q_hat_next: f64,
        score_next: &[f64],
        gamma: f64,
    ) -> Result<()> {
        let np = self.g_matrix.ncols();
        let (alpha, beta) = (self.alpha, self.beta_reg);
        let mut g_now = vec![0.0; np];
        let mut g_next = vec![0.0; np];
        let mut phi_h = vec![0.0; np];
        Self::row_combination(&self.g_matrix, phi, &mut g_now);
        Self::row_combination(&self.g_matrix, phi_next, &mut g_next);
        Self::row_combination(&self.h_matrix, phi, &mut phi_h);
        let eps: Vec<f64> = (0..np)
            .map(|k| gamma * q_hat_next * score_next[k] + gamma * g_next[k] - g_now[k])
            .collect();
        for (i, (&p, &pn)) in phi.iter().zip(phi_next).enumerate() {
            if p == 0.0 && pn == 0.0 {
                continue;
            }
            for k in 0..np {
                self.g_matrix[(i, k)] += alpha * p * eps[k] - alpha * gamma * pn * phi_h[k];
            }
        }
        if beta != 0.0 {
            self.h_matrix *= 1.0 - alpha * beta;
        }
        for (i, &p) in phi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for k in 0..np {
                self.h_matrix[(i, k)] += alpha * p * (eps[k] - phi_h[k]);
            }
        }
        if eps.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient critic".into()));
        }
        Ok(())
    }
}

/// Expected value-critic update under the sampling occupancy of `model`:
/// returns `(delta omega, delta chi)`.
pub fn expected_value_update(
    model: &PopulationModel,
    features: &FeatureMap,
    state: &TdrcValueState,
) -> (DVector<f64>, DVector<f64>) {
    let phi = features.matrix();
    let phi_next = &model.p_next * &phi;
    let v = &phi * &state.omega;
    let delta = &model.reward + &phi_next * &state.omega * model.gamma - &v;
    let corr = &phi * &state.chi;
    let dd = delta.component_mul(&model.d);
    let dc = corr.component_mul(&model.d);
    let d_omega = (phi.transpose() * &dd - phi_next.transpose() * &dc * model.gamma) * state.alpha;
    let d_chi = (phi.transpose() * (dd - &dc) - &state.chi * state.beta_reg) * state.alpha;
    (d_omega, d_chi)
}

/// Expected gradient-critic update: returns `(delta G, delta H)`.
pub fn expected_gamma_update(
    model: &PopulationModel,
    features: &FeatureMap,
    q_table: &DVector<f64>,
    state: &TdrcGammaState,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let phi = features.matrix();
    let phi_next = &model.p_next * &phi;
    let sq = oracle::weighted_scores(&model.scores, q_table);
    let eps = (&model.p_next * sq + &phi_next * &state.g_matrix) * model.gamma - &phi * &state.g_matrix;
    let corr = &phi * &state.h_matrix;
    let weigh = |m: &DMatrix<f64>| {
        let mut out = m.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= model.d[i];
        }
        out
    };
    let de = weigh(&eps);
    let dc = weigh(&corr);
    let d_g = (phi.transpose() * &de - phi_next.transpose() * &dc * model.gamma) * state.alpha;
    let d_h = (phi.transpose() * (de - &dc) - &state.h_matrix * state.beta_reg) * state.alpha;
    (d_g, d_h)
}

/// How transitions reach the learners.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// A single behavior trajectory, restarted at terminals and truncations.
    #[default]
    Stream,
    /// Independent `(s, a)` draws from the behavior occupancy.
    Iid,
}

/// How the actor applies its ascent direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorOptimizer {
    /// `theta += actor_lr * direction`.
    #[default]
    Sgd,
    /// Adam ascent with learning rate `actor_lr`.
    Adam,
}

enum Actor {
    Sgd(f64),
    Adam(AdamState),
}

impl Actor {
    fn new(cfg: &TdrcConfig, n_params: usize) -> Self {
        match cfg.actor_optimizer {
            ActorOptimizer::Sgd => Actor::Sgd(cfg.actor_lr),
            ActorOptimizer::Adam => Actor::Adam(AdamState::new(n_params, cfg.actor_lr)),
        }
    }

    fn apply(&mut self, direction: &DVector<f64>, theta: &mut [f64]) -> Result<()> {
        match self {
            Actor::Sgd(lr) => {
                for (t, d) in theta.iter_mut().zip(direction.iter()) {
                    *t += *lr * d;
                }
                Ok(())
            }
            Actor::Adam(adam) => adam.step(direction, theta),
        }
    }
}

/// Settings of the actor loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdrcConfig {
    #[serde(default)]
    pub lambda: f64,
    /// Value-critic step size.
    pub alpha: f64,
    /// Gradient-critic step size; defaults to `alpha`.
    #[serde(default)]
    pub alpha_gamma: Option<f64>,
    pub beta_reg: f64,
    pub actor_lr: f64,
    #[serde(default)]
    pub actor_optimizer: ActorOptimizer,
    pub total_steps: usize,
    /// Record the exact return every this many steps (0 disables).
    #[serde(default)]
    pub eval_every: usize,
    /// Truncate behavior episodes after this many steps.
    #[serde(default)]
    pub episode_len: Option<usize>,
    #[serde(default)]
    pub sampling: Sampling,
}

impl TdrcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.alpha > 0.0) || self.alpha_gamma.is_some_and(|a| !(a > 0.0)) {
            return Err(Error::Config("critic step sizes must be positive".into()));
        }
        if !(self.beta_reg >= 0.0) || !(self.actor_lr >= 0.0) {
            return Err(Error::Config("beta_reg and actor_lr must be nonnegative".into()));
        }
        if self.episode_len == Some(0) {
            return Err(Error::Config("episode_len must be at least 1".into()));
        }
        Ok(())
    }

    fn alpha_gamma(&self) -> f64 {
        self.alpha_gamma.unwrap_or(self.alpha)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    pub ret: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub curve: Vec<CurvePoint>,
    /// Parameter snapshot after every actor step, when requested.
    pub trajectory: Vec<Vec<f64>>,
    /// `(step, reason)` when the run was aborted.
    pub divergence: Option<(usize, String)>,
}

impl TrainOutcome {
    pub fn final_return(&self) -> Option<f64> {
        self.curve.last().map(|c| c.ret)
    }

    pub fn into_result(self) -> Result<Self> {
        match &self.divergence {
            Some((step, reason)) => Err(Error::Divergence {
                step: *step,
                reason: reason.clone(),
            }),
            None => Ok(self),
        }
    }
}

/// Source of `(s, a, r, s')` for the learners. Stream mode walks one
/// trajectory; i.i.d. mode draws `(s, a)` from a fixed occupancy.
struct Sampler {
    mode: Sampling,
    occupancy: Vec<f64>,
    episode_len: Option<usize>,
    s: usize,
    t: usize,
}

struct Sample {
    s: usize,
    a: usize,
    r: f64,
    s_next: usize,
    /// The next sample starts a new episode.
    reset: bool,
}

impl Sampler {
    fn new<R: Rng + ?Sized>(
        mdp: &FiniteMdp,
        behavior: &Policy,
        cfg: &TdrcConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let occupancy = match cfg.sampling {
            Sampling::Iid => oracle::discounted_distributions(mdp, behavior)?.d_sa.as_slice().to_vec(),
            Sampling::Stream => Vec::new(),
        };
        let s = match cfg.sampling {
            Sampling::Stream => mdp.sample_start(rng),
            Sampling::Iid => 0,
        };
        Ok(Sampler {
            mode: cfg.sampling,
            occupancy,
            episode_len: cfg.episode_len,
            s,
            t: 0,
        })
    }

    fn next<R: Rng + ?Sized>(&mut self, mdp: &FiniteMdp, behavior: &Policy, rng: &mut R) -> Sample {
        match self.mode {
            Sampling::Iid => {
                let i = sample_categorical(&self.occupancy, rng);
                let (s, a) = (i / mdp.n_actions, i % mdp.n_actions);
                let (s_next, r) = mdp.step(s, a, rng);
                Sample {
                    s,
                    a,
                    r,
                    s_next,
                    reset: true,
                }
            }
            Sampling::Stream => {
                let s = self.s;
                let a = behavior.sample_action(mdp.observe(s), rng);
                let (s_next, r) = mdp.step(s, a, rng);
                self.t += 1;
                let truncated = self.episode_len.is_some_and(|len| self.t >= len);
                let reset = mdp.is_terminal(s_next) || mdp.is_terminal(s) || truncated;
                Sample {
                    s,
                    a,
                    r,
                    s_next,
                    reset,
                }
            }
        }
    }

    fn advance<R: Rng + ?Sized>(&mut self, mdp: &FiniteMdp, sample: &Sample, rng: &mut R) {
        if self.mode == Sampling::Stream {
            if sample.reset {
                self.s = mdp.sample_start(rng);
                self.t = 0;
            } else {
                self.s = sample.s_next;
            }
        }
    }
}

fn check_params(step: usize, what: &str, values: &[f64]) -> Option<(usize, String)> {
    values
        .iter()
        .find(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
        .map(|v| (step, format!("{what} reached {v}")))
}

fn evaluate(mdp: &FiniteMdp, policy: &Policy, step: usize, curve: &mut Vec<CurvePoint>) -> Result<()> {
    curve.push(CurvePoint {
        step,
        ret: oracle::return_j(mdp, policy)?,
    });
    Ok(())
}

/// Options that only affect what is recorded.
#[derive(Clone, Copy, Debug, Default)]
pub struct Recording {
    pub trajectory: bool,
}

/// Actor loop with TDRC value and gradient critics. Each step acts with
/// the behavior policy, draws on-policy actions at `s_t` and `s_{t+1}`,
/// moves `theta` along `nu_t (Q score + (1 - lambda) Gamma)`, then updates
/// both critics. Parameters outside the policy mask follow the `lambda = 1`
/// path with their own `gamma^t` trace.
pub fn tdrc_gamma_train<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    behavior: &Policy,
    policy: &Policy,
    features: &FeatureMap,
    cfg: &TdrcConfig,
    record: Recording,
    rng: &mut R,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    policy.check_compatible(mdp)?;
    behavior.check_compatible(mdp)?;
    features.check_compatible(mdp)?;
    let mut policy = policy.clone();
    let np = policy.n_params();
    let nf = features.n_features;
    let mask = policy.mask_indicator();
    let gamma = mdp.gamma;
    let lambda = cfg.lambda;
    let mut value = TdrcValueState::new(nf, cfg.alpha, cfg.beta_reg);
    let mut grad = TdrcGammaState::new(nf, np, cfg.alpha_gamma(), cfg.beta_reg);
    let mut sampler = Sampler::new(mdp, behavior, cfg, rng)?;
    let zeros = vec![0.0; nf];
    let mut score = vec![0.0; np];
    let mut gamma_hat = vec![0.0; np];
    let mut direction = DVector::zeros(np);
    let mut actor = Actor::new(cfg, np);
    let mut nu = 1.0;
    let mut nu_plain = 1.0;
    let mut curve = Vec::new();
    let mut trajectory = Vec::new();
    if cfg.eval_every > 0 {
        evaluate(mdp, &policy, 0, &mut curve)?;
    }
    for step in 0..cfg.total_steps {
        let sample = sampler.next(mdp, behavior, rng);
        let obs = mdp.observe(sample.s);
        let obs_next = mdp.observe(sample.s_next);
        let a_pi = policy.sample_action(obs, rng);
        let a_pi_next = policy.sample_action(obs_next, rng);

        // actor
        let phi_pi = features.row(sample.s, a_pi);
        let q_hat = value.value(phi_pi);
        grad.gamma_row(phi_pi, &mut gamma_hat);
        policy.score_into(obs, a_pi, &mut score);
        for k in 0..np {
            direction[k] = if mask[k] {
                nu * (q_hat * score[k] + (1.0 - lambda) * gamma_hat[k])
            } else {
                nu_plain * (q_hat * score[k])
            };
        }
        let actor_ok = actor.apply(&direction, &mut policy.theta).is_ok();

        // critics see the updated policy's score at the next on-policy action
        let phi = features.row(sample.s, sample.a);
        let terminal_next = mdp.is_terminal(sample.s_next);
        let phi_next = if terminal_next {
            &zeros[..]
        } else {
            features.row(sample.s_next, a_pi_next)
        };
        let q_next = value.value(phi_next);
        if terminal_next {
            score.iter_mut().for_each(|v| *v = 0.0);
        } else {
            policy.score_into(obs_next, a_pi_next, &mut score);
        }
        let critic_ok = actor_ok
            & value.step(phi, phi_next, sample.r, gamma).is_ok()
            & grad.step(phi, phi_next, q_next, &score, gamma).is_ok();

        if record.trajectory {
            trajectory.push(policy.theta.clone());
        }
        let bad = if critic_ok {
            check_params(step, "policy parameter", &policy.theta)
                .or_else(|| check_params(step, "value critic", value.omega.as_slice()))
                .or_else(|| check_params(step, "gradient critic", grad.g_matrix.as_slice()))
        } else {
            Some((step, "non-finite update".to_string()))
        };
        if let Some(div) = bad {
            return Ok(TrainOutcome {
                policy,
                curve,
                trajectory,
                divergence: Some(div),
            });
        }

        if sample.reset {
            nu = 1.0;
            nu_plain = 1.0;
        } else {
            nu *= lambda * gamma;
            nu_plain *= gamma;
        }
        sampler.advance(mdp, &sample, rng);
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            evaluate(mdp, &policy, step + 1, &mut curve)?;
        }
    }
    Ok(TrainOutcome {
        policy,
        curve,
        trajectory,
        divergence: None,
    })
}

/// The same actor loop without a gradient critic: every parameter follows
/// `gamma^t Q score`. Random draws match [`tdrc_gamma_train`] one for one.
pub fn semi_gradient_train<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    behavior: &Policy,
    policy: &Policy,
    features: &FeatureMap,
    cfg: &TdrcConfig,
    record: Recording,
    rng: &mut R,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    policy.check_compatible(mdp)?;
    features.check_compatible(mdp)?;
    let mut policy = policy.clone();
    let np = policy.n_params();
    let gamma = mdp.gamma;
    let mut value = TdrcValueState::new(features.n_features, cfg.alpha, cfg.beta_reg);
    let mut sampler = Sampler::new(mdp, behavior, cfg, rng)?;
    let zeros = vec![0.0; features.n_features];
    let mut score = vec![0.0; np];
    let mut direction = DVector::zeros(np);
    let mut actor = Actor::new(cfg, np);
    let mut nu = 1.0;
    let mut curve = Vec::new();
    let mut trajectory = Vec::new();
    if cfg.eval_every > 0 {
        evaluate(mdp, &policy, 0, &mut curve)?;
    }
    for step in 0..cfg.total_steps {
        let sample = sampler.next(mdp, behavior, rng);
        let obs = mdp.observe(sample.s);
        let obs_next = mdp.observe(sample.s_next);
        let a_pi = policy.sample_action(obs, rng);
        let a_pi_next = policy.sample_action(obs_next, rng);

        let q_hat = value.value(features.row(sample.s, a_pi));
        policy.score_into(obs, a_pi, &mut score);
        for k in 0..np {
            direction[k] = nu * (q_hat * score[k]);
        }
        let actor_ok = actor.apply(&direction, &mut policy.theta).is_ok();

        let phi_next = if mdp.is_terminal(sample.s_next) {
            &zeros[..]
        } else {
            features.row(sample.s_next, a_pi_next)
        };
        let ok = actor_ok
            & value
                .step(features.row(sample.s, sample.a), phi_next, sample.r, gamma)
                .is_ok();
        if record.trajectory {
            trajectory.push(policy.theta.clone());
        }
        let bad = if ok {
            check_params(step, "policy parameter", &policy.theta)
                .or_else(|| check_params(step, "value critic", value.omega.as_slice()))
        } else {
            Some((step, "non-finite update".to_string()))
        };
        if let Some(div) = bad {
            return Ok(TrainOutcome {
                policy,
                curve,
                trajectory,
                divergence: Some(div),
            });
        }
        if sample.reset {
            nu = 1.0;
        } else {
            nu *= gamma;
        }
        sampler.advance(mdp, &sample, rng);
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            evaluate(mdp, &policy, step + 1, &mut curve)?;
        }
    }
    Ok(TrainOutcome {
        policy,
        curve,
        trajectory,
        divergence: None,
    })
}

/// Result of critic-only training under a frozen policy.
#[derive(Clone, Debug)]
pub struct CriticRun {
    pub value: TdrcValueState,
    pub gamma: TdrcGammaState,
    /// Average of the gradient-critic iterates over the second half of the run.
    pub g_average: DMatrix<f64>,
    pub omega_average: DVector<f64>,
}

/// Runs both TDRC critics for a fixed policy on `steps` samples and
/// averages the iterates over the second half of the run.
#[allow(clippy::too_many_arguments)]
pub fn train_critics<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    behavior: &Policy,
    policy: &Policy,
    features: &FeatureMap,
    alpha: f64,
    beta_reg: f64,
    steps: usize,
    sampling: Sampling,
    rng: &mut R,
) -> Result<CriticRun> {
    let cfg = TdrcConfig {
        lambda: 0.0,
        alpha,
        alpha_gamma: None,
        beta_reg,
        actor_lr: 0.0,
        actor_optimizer: ActorOptimizer::Sgd,
        total_steps: steps,
        eval_every: 0,
        episode_len: None,
        sampling,
    };
    cfg.validate()?;
    let np = policy.n_params();
    let nf = features.n_features;
    let mut value = TdrcValueState::new(nf, alpha, beta_reg);
    let mut grad = TdrcGammaState::new(nf, np, alpha, beta_reg);
    let mut sampler = Sampler::new(mdp, behavior, &cfg, rng)?;
    let zeros = vec![0.0; nf];
    let mut score = vec![0.0; np];
    let burn_in = steps / 2;
    let mut g_sum = DMatrix::zeros(nf, np);
    let mut w_sum = DVector::zeros(nf);
    for step in 0..steps {
        let sample = sampler.next(mdp, behavior, rng);
        let obs_next = mdp.observe(sample.s_next);
        let a_next = policy.sample_action(obs_next, rng);
        let phi = features.row(sample.s, sample.a);
        let terminal_next = mdp.is_terminal(sample.s_next);
        let phi_next = if terminal_next {
            &zeros[..]
        } else {
            features.row(sample.s_next, a_next)
        };
        let q_next = value.value(phi_next);
        if terminal_next {
            score.iter_mut().for_each(|v| *v = 0.0);
        } else {
            policy.score_into(obs_next, a_next, &mut score);
        }
        value.step(phi, phi_next, sample.r, mdp.gamma)?;
        grad.step(phi, phi_next, q_next, &score, mdp.gamma)?;
        if let Some((s, reason)) = check_params(step, "critic", grad.g_matrix.as_slice()) {
            return Err(Error::Divergence { step: s, reason });
        }
        if step >= burn_in {
            g_sum += &grad.g_matrix;
            w_sum += &value.omega;
        }
        sampler.advance(mdp, &sample, rng);
    }
    let count = (steps - burn_in).max(1) as f64;
    Ok(CriticRun {
        value,
        gamma: grad,
        g_average: g_sum / count,
        omega_average: w_sum / count,
    })
}
