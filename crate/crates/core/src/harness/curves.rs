//! Learning-curve protocols for the online and the LSTD-based actors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::BenchEnv;
use crate::error::Result;
use crate::estimators::{lstd_gamma_trace_improve, AdamState, TraceVariant};
use crate::harness::csv::{fmt_f64, Table};
use crate::mdp::collect_dataset;
use crate::online::{tdrc_gamma_train, Recording, TdrcConfig};
use crate::rng;

pub const CURVE_COLUMNS: [&str; 6] = ["env", "lambda", "seed", "step", "return", "diverged"];
pub const LSTD_COLUMNS: [&str; 5] = ["iter", "seed", "lambda", "variant", "return"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub env: String,
    pub lambda: f64,
    pub seed: u64,
    pub step: usize,
    pub ret: f64,
    pub diverged: bool,
}

/// One finished run: its curve and, if it stopped early, why.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub env_index: usize,
    pub lambda: f64,
    pub seed: u64,
    pub rows: Vec<CurveRow>,
    pub divergence: Option<String>,
}

impl RunResult {
    pub fn final_return(&self) -> Option<f64> {
        self.rows.last().map(|r| r.ret)
    }
}

pub fn curve_table(runs: &[RunResult]) -> Table {
    let mut t = Table::new(&CURVE_COLUMNS);
    for row in runs.iter().flat_map(|r| &r.rows) {
        t.push(vec![
            row.env.clone(),
            fmt_f64(row.lambda),
            row.seed.to_string(),
            row.step.to_string(),
            fmt_f64(row.ret),
            u8::from(row.diverged).to_string(),
        ]);
    }
    t
}

/// Rows of the fixed-dataset actor, `step` holding the iteration.
pub fn lstd_curve_table(runs: &[RunResult], variant: TraceVariant) -> Table {
    let label = match variant {
        TraceVariant::Blend => "blend",
        TraceVariant::FullCritic => "full_critic",
    };
    let mut t = Table::new(&LSTD_COLUMNS);
    for row in runs.iter().flat_map(|r| &r.rows) {
        t.push(vec![
            row.step.to_string(),
            row.seed.to_string(),
            fmt_f64(row.lambda),
            label.to_string(),
            fmt_f64(row.ret),
        ]);
    }
    t
}

/// Options of the online protocol beyond the per-run learner settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TdrcProtocol {
    /// Restrict the gradient critic to the policy's output layer.
    #[serde(default)]
    pub last_layer: bool,
}

/// Runs the online actor for every `(env, lambda, seed)` triple. Each run
/// has its own generator keyed by `(master_seed, env, lambda index, seed)`
/// and results come back in that order whatever the scheduling.
pub fn tdrc_curves(
    envs: &[BenchEnv],
    base: &TdrcConfig,
    protocol: &TdrcProtocol,
    lambdas: &[f64],
    seeds: &[u64],
    master_seed: u64,
) -> Result<Vec<RunResult>> {
    let tasks: Vec<(usize, usize, u64)> = (0..envs.len())
        .flat_map(|e| (0..lambdas.len()).flat_map(move |l| seeds.iter().map(move |&s| (e, l, s))))
        .collect();
    tasks
        .par_iter()
        .map(|&(e, l, seed)| {
            let env = &envs[e];
            let cfg = TdrcConfig {
                lambda: lambdas[l],
                ..base.clone()
            };
            let mut policy = env.init_policy.clone();
            if protocol.last_layer {
                let idx = policy.last_layer_indices();
                policy = policy.with_mask(idx)?;
            }
            let mut r = rng::keyed(master_seed, &[e as u64, l as u64, seed]);
            let out = tdrc_gamma_train(&env.mdp, &env.behavior, &policy, &env.features, &cfg, Recording::default(), &mut r)?;
            let diverged = out.divergence.is_some();
            let mut rows: Vec<CurveRow> = out
                .curve
                .iter()
                .map(|p| CurveRow {
                    env: env.name.clone(),
                    lambda: cfg.lambda,
                    seed,
                    step: p.step,
                    ret: p.ret,
                    diverged: false,
                })
                .collect();
            if let (Some((step, _)), Some(last)) = (&out.divergence, rows.last()) {
                let mut flagged = last.clone();
                flagged.step = step + 1;
                flagged.diverged = diverged;
                rows.push(flagged);
            }
            Ok(RunResult {
                env_index: e,
                lambda: cfg.lambda,
                seed,
                rows,
                divergence: out.divergence.map(|(s, why)| format!("step {s}: {why}")),
            })
        })
        .collect()
}

/// Settings of the fixed-dataset LSTD actor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstdCurveConfig {
    pub dataset_size: usize,
    #[serde(default = "crate::harness::bias_variance::default_episode_len")]
    pub episode_len: usize,
    pub iters: usize,
    pub adam_lr: f64,
    #[serde(default)]
    pub variant: TraceVariant,
}

/// Every `(lambda, seed)` run draws its own dataset and improves the
/// initial policy on it.
pub fn lstd_curves(
    env: &BenchEnv,
    cfg: &LstdCurveConfig,
    lambdas: &[f64],
    seeds: &[u64],
    master_seed: u64,
) -> Result<Vec<RunResult>> {
    let tasks: Vec<(usize, u64)> = (0..lambdas.len())
        .flat_map(|l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    tasks
        .par_iter()
        .map(|&(l, seed)| {
            let lambda = lambdas[l];
            let mut r = rng::keyed(master_seed, &[l as u64, seed]);
            let data = collect_dataset(&env.mdp, &env.behavior, cfg.dataset_size, cfg.episode_len, &mut r)?;
            let mut adam = AdamState::new(env.init_policy.n_params(), cfg.adam_lr);
            let out = lstd_gamma_trace_improve(env, &data, lambda, cfg.variant, &mut adam, cfg.iters, &mut r)?;
            let rows = out
                .curve
                .iter()
                .map(|p| CurveRow {
                    env: env.name.clone(),
                    lambda,
                    seed,
                    step: p.iter,
                    ret: p.ret,
                    diverged: false,
                })
                .collect();
            Ok(RunResult {
                env_index: 0,
                lambda,
                seed,
                rows,
                divergence: None,
            })
        })
        .collect()
}
