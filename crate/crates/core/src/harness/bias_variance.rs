//! Repeated-dataset bias and variance of gradient estimators.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::BenchEnv;
use crate::error::{Error, Result};
use crate::estimators::{self, ActionDraw, EstimateReport, StartStates, TraceVariant};
use crate::harness::csv::{fmt_f64, Table};
use crate::lstd;
use crate::mdp::collect_dataset;
use crate::oracle;
use crate::rng;

/// Estimators selectable by id in configs and on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    /// LSTD critics with the uncorrected lambda-trace sum.
    LstdGamma,
    /// LSTD critics with importance-corrected lambda-trace sum.
    LstdGammaCorrected,
    /// LSTD critics, lambda = 0 estimate from logged start states.
    StartState,
    /// Importance-weighted logged-action estimate with the LSTD value critic.
    SemiGradient,
    /// Full-trajectory importance sampling with the LSTD value critic.
    PathwiseIs,
    /// The exact gradient; a zero-noise reference.
    Oracle,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 6] = [
        EstimatorId::LstdGamma,
        EstimatorId::LstdGammaCorrected,
        EstimatorId::StartState,
        EstimatorId::SemiGradient,
        EstimatorId::PathwiseIs,
        EstimatorId::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorId::LstdGamma => "lstd_gamma",
            EstimatorId::LstdGammaCorrected => "lstd_gamma_corrected",
            EstimatorId::StartState => "start_state",
            EstimatorId::SemiGradient => "semi_gradient",
            EstimatorId::PathwiseIs => "pathwise_is",
            EstimatorId::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownEstimator {
                given: s.to_string(),
                valid: Self::ALL.iter().map(|id| id.as_str().to_string()).collect(),
            })
    }
}

/// Data-collection and estimator settings shared by every draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    pub estimator: EstimatorId,
    #[serde(default)]
    pub variant: TraceVariant,
    pub dataset_size: usize,
    #[serde(default = "default_episode_len")]
    pub episode_len: usize,
}

pub fn default_episode_len() -> usize {
    50
}

/// One gradient estimate on a freshly collected dataset.
pub fn estimate_once<R: Rng + ?Sized>(
    env: &BenchEnv,
    settings: &EstimatorSettings,
    lambda: f64,
    rng: &mut R,
) -> Result<EstimateReport> {
    let mdp = &env.mdp;
    let policy = &env.init_policy;
    if settings.estimator == EstimatorId::Oracle {
        return Ok(EstimateReport::new(oracle::true_policy_gradient(mdp, policy)?, "oracle", 0));
    }
    let data = collect_dataset(mdp, &env.behavior, settings.dataset_size, settings.episode_len, rng)?;
    let fit = lstd::fit_sample(mdp, &data, &env.features, &env.features, policy, false, rng)?;
    let q_hat = fit.q_table(&env.features);
    let gamma_hat = fit.gamma_table(&env.features);
    let episodes = data.episodes();
    let mut report = match settings.estimator {
        EstimatorId::LstdGamma | EstimatorId::LstdGammaCorrected => estimators::lambda_trace_gradient(
            mdp,
            &episodes,
            &q_hat,
            &gamma_hat,
            policy,
            &env.behavior,
            lambda,
            settings.estimator == EstimatorId::LstdGammaCorrected,
            settings.variant,
            ActionDraw::Sampled,
            rng,
        )?,
        EstimatorId::StartState => estimators::start_state_gradient(
            mdp,
            &StartStates::Sampled(data.start_states()),
            &q_hat,
            &gamma_hat,
            policy,
            ActionDraw::Sampled,
            rng,
        )?,
        EstimatorId::SemiGradient => estimators::semi_gradient(mdp, &data, &q_hat, policy, &env.behavior)?,
        EstimatorId::PathwiseIs => estimators::pathwise_is_gradient(
            mdp,
            &episodes,
            &q_hat,
            None,
            policy,
            &env.behavior,
            None,
            ActionDraw::Sampled,
            rng,
        )?,
        EstimatorId::Oracle => unreachable!("handled above"),
    };
    report.estimator_id = settings.estimator.as_str().to_string();
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasVarianceRow {
    pub lambda: f64,
    pub outer_repeat: usize,
    pub bias_sq_mean: f64,
    pub variance_mean: f64,
    pub n_inner: usize,
}

/// Every estimate behind the summary rows.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEstimate {
    pub lambda: f64,
    pub outer_repeat: usize,
    pub inner: usize,
    pub grad: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BiasVarianceRun {
    pub rows: Vec<BiasVarianceRow>,
    pub raw: Vec<RawEstimate>,
    pub true_grad: Vec<f64>,
}

/// Squared bias and variance per component, averaged over components.
/// Variance uses divisor `n`.
pub fn summarize(estimates: &[Vec<f64>], truth: &[f64]) -> (f64, f64) {
    let n = estimates.len() as f64;
    let np = truth.len();
    let mut bias_sq = 0.0;
    let mut var = 0.0;
    for k in 0..np {
        let mean = estimates.iter().map(|g| g[k]).sum::<f64>() / n;
        bias_sq += (mean - truth[k]).powi(2);
        var += estimates.iter().map(|g| (g[k] - mean).powi(2)).sum::<f64>() / n;
    }
    (bias_sq / np as f64, var / np as f64)
}

/// For every lambda and outer repeat, draws `n_inner` estimates on fresh
/// datasets and reports their squared bias against the exact gradient and
/// their variance. Draw `(lambda_idx, outer, inner)` uses its own generator
/// stream, so results do not depend on scheduling.
pub fn bias_variance_protocol(
    env: &BenchEnv,
    settings: &EstimatorSettings,
    lambdas: &[f64],
    n_inner: usize,
    n_outer: usize,
    seed: u64,
) -> Result<BiasVarianceRun> {
    if n_inner == 0 || n_outer == 0 || lambdas.is_empty() {
        return Err(Error::Config("bias-variance needs n_inner, n_outer and lambdas >= 1".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Config(format!("lambda {l} outside [0, 1]")));
    }
    let truth = oracle::true_policy_gradient(&env.mdp, &env.init_policy)?;
    let tasks: Vec<(usize, usize, usize)> = (0..lambdas.len())
        .flat_map(|l| (0..n_outer).flat_map(move |o| (0..n_inner).map(move |i| (l, o, i))))
        .collect();
    let estimates: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&(l, o, i)| {
            let mut r = rng::keyed(seed, &[l as u64, o as u64, i as u64]);
            estimate_once(env, settings, lambdas[l], &mut r).map(|rep| rep.grad)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(lambdas.len() * n_outer);
    let mut raw = Vec::with_capacity(tasks.len());
    for (chunk_idx, chunk) in estimates.chunks(n_inner).enumerate() {
        let (l, o) = (chunk_idx / n_outer, chunk_idx % n_outer);
        let (bias_sq_mean, variance_mean) = summarize(chunk, truth.as_slice());
        rows.push(BiasVarianceRow {
            lambda: lambdas[l],
            outer_repeat: o,
            bias_sq_mean,
            variance_mean,
            n_inner,
        });
        for (i, g) in chunk.iter().enumerate() {
            raw.push(RawEstimate {
                lambda: lambdas[l],
                outer_repeat: o,
                inner: i,
                grad: g.clone(),
            });
        }
    }
    Ok(BiasVarianceRun {
        rows,
        raw,
        true_grad: truth.as_slice().to_vec(),
    })
}

pub const SUMMARY_COLUMNS: [&str; 5] = ["lambda", "outer_repeat", "bias_sq_mean", "variance_mean", "n_inner"];
pub const RAW_COLUMNS: [&str; 6] = ["lambda", "outer_repeat", "inner", "component", "estimate", "true_grad"];

impl BiasVarianceRun {
    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&SUMMARY_COLUMNS);
        for r in &self.rows {
            t.push(vec![
                fmt_f64(r.lambda),
                r.outer_repeat.to_string(),
                fmt_f64(r.bias_sq_mean),
                fmt_f64(r.variance_mean),
                r.n_inner.to_string(),
            ]);
        }
        t
    }

    pub fn raw_table(&self) -> Table {
        let mut t = Table::new(&RAW_COLUMNS);
        for e in &self.raw {
            for (k, v) in e.grad.iter().enumerate() {
                t.push(vec![
                    fmt_f64(e.lambda),
                    e.outer_repeat.to_string(),
                    e.inner.to_string(),
                    k.to_string(),
                    fmt_f64(*v),
                    fmt_f64(self.true_grad[k]),
                ]);
            }
        }
        t
    }

    /// Per-repeat summaries for one lambda.
    pub fn rows_for(&self, lambda: f64) -> Vec<&BiasVarianceRow> {
        self.rows.iter().filter(|r| r.lambda == lambda).collect()
    }
}

/// Recomputes summary rows from a raw dump.
pub fn summary_from_raw(raw: &Table) -> Result<Table> {
    let lambda = raw.floats("lambda")?;
    let outer = raw.floats("outer_repeat")?;
    let inner = raw.floats("inner")?;
    let est = raw.floats("estimate")?;
    let truth = raw.floats("true_grad")?;
    let mut out = Table::new(&SUMMARY_COLUMNS);
    let mut i = 0;
    while i < raw.rows.len() {
        let (l, o) = (lambda[i], outer[i]);
        let mut estimates: Vec<Vec<f64>> = Vec::new();
        let mut true_grad = Vec::new();
        while i < raw.rows.len() && lambda[i] == l && outer[i] == o {
            let n = inner[i] as usize;
            if estimates.len() <= n {
                estimates.push(Vec::new());
            }
            estimates[n].push(est[i]);
            if n == 0 {
                true_grad.push(truth[i]);
            }
            i += 1;
        }
        let (b, v) = summarize(&estimates, &true_grad);
        out.push(vec![
            fmt_f64(l),
            (o as usize).to_string(),
            fmt_f64(b),
            fmt_f64(v),
            estimates.len().to_string(),
        ]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_estimator_has_no_bias_or_variance() {
        let env = crate::envs::imani_default();
        let settings = EstimatorSettings {
            estimator: EstimatorId::Oracle,
            variant: TraceVariant::Blend,
            dataset_size: 10,
            episode_len: 50,
        };
        let run = bias_variance_protocol(&env, &settings, &[0.0, 1.0], 3, 2, 0).unwrap();
        assert_eq!(run.rows.len(), 4);
        for r in &run.rows {
            assert_eq!(r.bias_sq_mean, 0.0);
            assert_eq!(r.variance_mean, 0.0);
        }
    }

    #[test]
    fn unknown_estimator_lists_valid_ids() {
        let e = EstimatorId::parse("bogus").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("bogus") && msg.contains("lstd_gamma") && msg.contains("pathwise_is"));
    }
}
