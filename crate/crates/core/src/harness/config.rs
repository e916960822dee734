//! JSON run configurations and their dispatch.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{imani_default, imani_env, random_suite, BenchEnv, SuiteConfig};
use crate::error::{Error, Result};
use crate::harness::bias_variance::{bias_variance_protocol, EstimatorSettings};
use crate::harness::curves::{curve_table, lstd_curve_table, lstd_curves, tdrc_curves, LstdCurveConfig, RunResult, TdrcProtocol};
use crate::online::TdrcConfig;

/// Where a protocol gets its environments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    /// The aliasing benchmark; `path` overrides the bundled asset.
    Imani {
        #[serde(default)]
        path: Option<PathBuf>,
    },
    RandomSuite {
        count: usize,
        seed: u64,
        #[serde(default)]
        suite: SuiteConfig,
    },
}

impl EnvSpec {
    pub fn build(&self) -> Result<Vec<BenchEnv>> {
        match self {
            EnvSpec::Imani { path: Some(p) } => Ok(vec![imani_env(p)?]),
            EnvSpec::Imani { path: None } => Ok(vec![imani_default()]),
            EnvSpec::RandomSuite { count, seed, suite } => random_suite(suite, *count, *seed),
        }
    }

    fn single(&self) -> Result<BenchEnv> {
        let mut envs = self.build()?;
        if envs.len() != 1 {
            return Err(Error::Config(format!("protocol needs one environment, got {}", envs.len())));
        }
        Ok(envs.remove(0))
    }
}

/// The 21-point grid `{0, 0.05, ..., 1}`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

fn default_seed_list() -> Vec<u64> {
    (0..10).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum RunConfig {
    BiasVariance {
        env: EnvSpec,
        #[serde(flatten)]
        estimator: EstimatorSettings,
        #[serde(default = "default_lambda_grid")]
        lambdas: Vec<f64>,
        n_inner: usize,
        n_outer: usize,
        #[serde(default)]
        seed: u64,
        out: PathBuf,
        /// Also write every individual estimate here.
        #[serde(default)]
        dump_raw: Option<PathBuf>,
    },
    TdrcCurves {
        env: EnvSpec,
        learner: TdrcConfig,
        #[serde(default)]
        last_layer: bool,
        #[serde(default = "default_lambda_grid")]
        lambdas: Vec<f64>,
        #[serde(default = "default_seed_list")]
        seeds: Vec<u64>,
        #[serde(default)]
        seed: u64,
        out: PathBuf,
    },
    LstdCurves {
        env: EnvSpec,
        #[serde(flatten)]
        learner: LstdCurveConfig,
        #[serde(default = "default_lambda_grid")]
        lambdas: Vec<f64>,
        #[serde(default = "default_seed_list")]
        seeds: Vec<u64>,
        #[serde(default)]
        seed: u64,
        out: PathBuf,
    },
}

fn check_lambdas(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    match lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        Some(l) => Err(Error::Config(format!("lambda {l} outside [0, 1]"))),
        None => Ok(()),
    }
}

fn check_counts(items: &[(&str, usize)]) -> Result<()> {
    match items.iter().find(|(_, v)| *v == 0) {
        Some((name, _)) => Err(Error::Config(format!("{name} must be at least 1"))),
        None => Ok(()),
    }
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RunConfig::BiasVariance {
                estimator,
                lambdas,
                n_inner,
                n_outer,
                ..
            } => {
                check_lambdas(lambdas)?;
                check_counts(&[
                    ("n_inner", *n_inner),
                    ("n_outer", *n_outer),
                    ("dataset_size", estimator.dataset_size),
                    ("episode_len", estimator.episode_len),
                ])
            }
            RunConfig::TdrcCurves {
                learner, lambdas, seeds, ..
            } => {
                check_lambdas(lambdas)?;
                learner.validate()?;
                check_counts(&[("total_steps", learner.total_steps), ("seeds", seeds.len())])
            }
            RunConfig::LstdCurves {
                learner, lambdas, seeds, ..
            } => {
                check_lambdas(lambdas)?;
                check_counts(&[
                    ("iters", learner.iters),
                    ("dataset_size", learner.dataset_size),
                    ("episode_len", learner.episode_len),
                    ("seeds", seeds.len()),
                ])
            }
        }
    }

    pub fn out(&self) -> &Path {
        match self {
            RunConfig::BiasVariance { out, .. } | RunConfig::TdrcCurves { out, .. } | RunConfig::LstdCurves { out, .. } => out,
        }
    }
}

/// What a dispatched run produced.
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub written: Vec<PathBuf>,
    /// Human-readable notes on diverged runs or regularized solves.
    pub problems: Vec<String>,
}

fn divergences(runs: &[RunResult]) -> Vec<String> {
    runs.iter()
        .filter_map(|r| {
            r.divergence
                .as_ref()
                .map(|d| format!("env {} lambda {} seed {} diverged at {d}", r.env_index, r.lambda, r.seed))
        })
        .collect()
}

/// Runs the protocol named by the config and writes its CSVs. With `strict`,
/// any diverged run turns into an error after the files are written.
pub fn run_config(cfg: &RunConfig, strict: bool) -> Result<RunSummary> {
    cfg.validate()?;
    let mut summary = RunSummary::default();
    match cfg {
        RunConfig::BiasVariance {
            env,
            estimator,
            lambdas,
            n_inner,
            n_outer,
            seed,
            out,
            dump_raw,
        } => {
            let env = env.single()?;
            let run = bias_variance_protocol(&env, estimator, lambdas, *n_inner, *n_outer, *seed)?;
            run.summary_table().write(out)?;
            summary.written.push(out.clone());
            if let Some(raw) = dump_raw {
                run.raw_table().write(raw)?;
                summary.written.push(raw.clone());
            }
        }
        RunConfig::TdrcCurves {
            env,
            learner,
            last_layer,
            lambdas,
            seeds,
            seed,
            out,
        } => {
            let envs = env.build()?;
            let protocol = TdrcProtocol { last_layer: *last_layer };
            let runs = tdrc_curves(&envs, learner, &protocol, lambdas, seeds, *seed)?;
            curve_table(&runs).write(out)?;
            summary.written.push(out.clone());
            summary.problems = divergences(&runs);
        }
        RunConfig::LstdCurves {
            env,
            learner,
            lambdas,
            seeds,
            seed,
            out,
        } => {
            let env = env.single()?;
            let runs = lstd_curves(&env, learner, lambdas, seeds, *seed)?;
            lstd_curve_table(&runs, learner.variant).write(out)?;
            summary.written.push(out.clone());
        }
    }
    if strict {
        if let Some(first) = summary.problems.first() {
            return Err(Error::Divergence {
                step: 0,
                reason: format!("{} run(s) diverged; first: {first}", summary.problems.len()),
            });
        }
    }
    Ok(summary)
}
