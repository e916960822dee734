use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gradcritic::envs::{imani_default, random_env, random_mdp, BenchEnv, RandomMdpConfig, SuiteConfig};
use gradcritic::estimators::TraceVariant;
use gradcritic::harness::bias_variance::{bias_variance_protocol, estimate_once, EstimatorId, EstimatorSettings};
use gradcritic::harness::config::{default_lambda_grid, run_config, RunConfig};
use gradcritic::harness::curves::{curve_table, lstd_curve_table, lstd_curves, tdrc_curves, LstdCurveConfig, TdrcProtocol};
use gradcritic::harness::init_threads;
use gradcritic::harness::svg::emit_summary_svg;
use gradcritic::online::{ActorOptimizer, Sampling, TdrcConfig};
use gradcritic::oracle::{bound_report, OracleGradients};
use gradcritic::{rng, Error, FeatureMap, FiniteMdp, Policy};

#[derive(Parser)]
#[command(name = "gradcritic", version, about = "Gradient critics for off-policy policy gradients on finite MDPs")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; JSON results go to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run a JSON config instead of a subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Exit nonzero when any run diverges.
    #[arg(long, global = true)]
    strict: bool,
    /// Worker threads (GRADCRITIC_THREADS takes precedence).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact q, gradient critic, gradient and return.
    Oracle(EnvArgs),
    /// One gradient estimate on a fresh dataset.
    Estimate {
        #[command(flatten)]
        env: EnvArgs,
        #[command(flatten)]
        est: EstArgs,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
    },
    /// Squared bias and variance of an estimator across lambda.
    BiasVariance {
        #[command(flatten)]
        env: EnvArgs,
        #[command(flatten)]
        est: EstArgs,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 20)]
        n_inner: usize,
        #[arg(long, default_value_t = 50)]
        n_outer: usize,
        /// Also write every individual estimate.
        #[arg(long)]
        dump_raw: Option<PathBuf>,
    },
    /// Learning curves of the LSTD-critic actor on a fixed dataset.
    TrainLstd {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long, default_value_t = 500)]
        dataset_size: usize,
        #[arg(long, default_value_t = 50)]
        episode_len: usize,
        #[arg(long, default_value_t = 0.01)]
        adam_lr: f64,
        #[arg(long, value_enum, default_value_t = VariantArg::Blend)]
        variant: VariantArg,
    },
    /// Learning curves of the online actor with TDRC critics.
    TrainTdrc {
        #[command(flatten)]
        env: EnvArgs,
        /// Train on this many random MDPs instead of a single environment.
        #[arg(long)]
        suite: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 5000)]
        steps: usize,
        #[arg(long, default_value_t = 100)]
        eval_every: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 0.001)]
        actor_lr: f64,
        #[arg(long, value_enum, default_value_t = ActorOpt::Sgd)]
        actor_optimizer: ActorOpt,
        #[arg(long)]
        episode_len: Option<usize>,
        /// Gradient critic only for the policy's output layer.
        #[arg(long)]
        last_layer: bool,
    },
    /// Generate a random MDP as JSON.
    GenMdp {
        #[arg(long, default_value_t = 30)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        actions: usize,
        #[arg(long, default_value_t = 10.0)]
        temp: f64,
        #[arg(long, default_value_t = 0.95)]
        gamma: f64,
    },
    /// Error bounds of the TD gradient critic against their measured sides.
    Bounds {
        #[command(flatten)]
        env: EnvArgs,
        /// Random critic features of this width instead of one-hot.
        #[arg(long)]
        n_features: Option<usize>,
        /// Evaluate on-policy: the behavior is the target policy itself.
        #[arg(long)]
        on_policy: bool,
    },
    /// Render a protocol CSV as SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
    },
    /// Run a JSON config.
    Run {
        config_path: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvKind {
    Imani,
    Random,
}

#[derive(Args)]
struct EnvArgs {
    #[arg(long, value_enum, default_value_t = EnvKind::Imani)]
    env: EnvKind,
    /// MDP JSON file; replaces the named environment.
    #[arg(long)]
    mdp: Option<PathBuf>,
    /// Target policy JSON (with --mdp).
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Behavior policy JSON (with --mdp; uniform when omitted).
    #[arg(long)]
    behavior: Option<PathBuf>,
    /// Member of the random family, keyed together with --seed.
    #[arg(long, default_value_t = 0)]
    index: u64,
}

#[derive(Args)]
struct EstArgs {
    #[arg(long, default_value = "lstd_gamma")]
    estimator: String,
    #[arg(long, value_enum, default_value_t = VariantArg::Blend)]
    variant: VariantArg,
    #[arg(long, default_value_t = 500)]
    dataset_size: usize,
    #[arg(long, default_value_t = 50)]
    episode_len: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActorOpt {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Blend,
    FullCritic,
}

impl From<VariantArg> for TraceVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Blend => TraceVariant::Blend,
            VariantArg::FullCritic => TraceVariant::FullCritic,
        }
    }
}

impl EstArgs {
    fn settings(&self) -> Result<EstimatorSettings, Error> {
        Ok(EstimatorSettings {
            estimator: EstimatorId::parse(&self.estimator)?,
            variant: self.variant.into(),
            dataset_size: self.dataset_size,
            episode_len: self.episode_len,
        })
    }
}

fn load_env(args: &EnvArgs, seed: u64) -> Result<BenchEnv, Error> {
    if let Some(mdp_path) = &args.mdp {
        let mdp = FiniteMdp::load(mdp_path)?;
        let policy_path = args
            .policy
            .as_ref()
            .ok_or_else(|| Error::Config("--mdp needs --policy".into()))?;
        let init_policy = Policy::load(policy_path)?;
        init_policy.check_compatible(&mdp)?;
        let behavior = match &args.behavior {
            Some(p) => Policy::load(p)?,
            None => Policy::tabular_uniform(mdp.n_states, mdp.n_actions),
        };
        behavior.check_compatible(&mdp)?;
        let features = FeatureMap::one_hot(&mdp);
        return Ok(BenchEnv {
            name: mdp_path.display().to_string(),
            mdp,
            behavior,
            init_policy,
            features,
        });
    }
    match args.env {
        EnvKind::Imani => Ok(imani_default()),
        EnvKind::Random => random_env(&SuiteConfig::default(), seed, args.index),
    }
}

fn emit_json(out: Option<&Path>, value: &impl serde::Serialize) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| Error::io(p, e))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn require_out(out: Option<&Path>) -> Result<&Path, Error> {
    out.ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn strict_check(strict: bool, problems: &[String]) -> Result<(), Error> {
    for p in problems {
        eprintln!("warning: {p}");
    }
    match problems.first() {
        Some(first) if strict => Err(Error::Divergence {
            step: 0,
            reason: format!("{} run(s) diverged; first: {first}", problems.len()),
        }),
        _ => Ok(()),
    }
}

fn run_config_file(path: &Path, strict: bool) -> anyhow::Result<()> {
    let cfg = RunConfig::load(path)?;
    let summary = run_config(&cfg, false)?;
    for p in &summary.written {
        eprintln!("wrote {}", p.display());
    }
    strict_check(strict, &summary.problems)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads(cli.threads)?;
    let out = cli.out.as_deref();
    let seed = cli.seed;
    let Some(command) = cli.command else {
        let path = cli
            .config
            .as_deref()
            .ok_or_else(|| Error::Config("give a subcommand or --config".into()))?;
        return run_config_file(path, cli.strict);
    };
    match command {
        Command::Oracle(env) => {
            let env = load_env(&env, seed)?;
            emit_json(out, &OracleGradients::compute(&env.mdp, &env.init_policy)?)?;
        }
        Command::Estimate { env, est, lambda } => {
            let env = load_env(&env, seed)?;
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")).into());
            }
            let mut r = rng::stream(seed, 0);
            let mut report = estimate_once(&env, &est.settings()?, lambda, &mut r)?.with_seed(seed);
            report.lambda.get_or_insert(lambda);
            report.n_samples = est.dataset_size;
            emit_json(out, &report)?;
        }
        Command::BiasVariance {
            env,
            est,
            lambdas,
            n_inner,
            n_outer,
            dump_raw,
        } => {
            let out = require_out(out)?;
            let env = load_env(&env, seed)?;
            let lambdas = lambdas.unwrap_or_else(default_lambda_grid);
            let run = bias_variance_protocol(&env, &est.settings()?, &lambdas, n_inner, n_outer, seed)?;
            run.summary_table().write(out)?;
            if let Some(raw) = dump_raw {
                run.raw_table().write(raw)?;
            }
        }
        Command::TrainLstd {
            env,
            lambdas,
            seeds,
            iters,
            dataset_size,
            episode_len,
            adam_lr,
            variant,
        } => {
            let out = require_out(out)?;
            let env = load_env(&env, seed)?;
            let cfg = LstdCurveConfig {
                dataset_size,
                episode_len,
                iters,
                adam_lr,
                variant: variant.into(),
            };
            let lambdas = lambdas.unwrap_or_else(default_lambda_grid);
            let seeds: Vec<u64> = (0..seeds).collect();
            lstd_curve_table(&lstd_curves(&env, &cfg, &lambdas, &seeds, seed)?, cfg.variant).write(out)?;
        }
        Command::TrainTdrc {
            env,
            suite,
            lambdas,
            seeds,
            steps,
            eval_every,
            alpha,
            beta,
            actor_lr,
            actor_optimizer,
            episode_len,
            last_layer,
        } => {
            let out = require_out(out)?;
            let envs = match suite {
                Some(count) => gradcritic::envs::random_suite(&SuiteConfig::default(), count, seed)?,
                None => vec![load_env(&env, seed)?],
            };
            let cfg = TdrcConfig {
                lambda: 0.0,
                alpha,
                alpha_gamma: None,
                beta_reg: beta,
                actor_lr,
                actor_optimizer: match actor_optimizer {
                    ActorOpt::Sgd => ActorOptimizer::Sgd,
                    ActorOpt::Adam => ActorOptimizer::Adam,
                },
                total_steps: steps,
                eval_every,
                episode_len,
                sampling: Sampling::Stream,
            };
            let lambdas = lambdas.unwrap_or_else(default_lambda_grid);
            let seeds: Vec<u64> = (0..seeds).collect();
            let runs = tdrc_curves(&envs, &cfg, &TdrcProtocol { last_layer }, &lambdas, &seeds, seed)?;
            curve_table(&runs).write(out)?;
            let problems: Vec<String> = runs
                .iter()
                .filter_map(|r| {
                    r.divergence
                        .as_ref()
                        .map(|d| format!("env {} lambda {} seed {}: {d}", r.env_index, r.lambda, r.seed))
                })
                .collect();
            strict_check(cli.strict, &problems)?;
        }
        Command::GenMdp {
            states,
            actions,
            temp,
            gamma,
        } => {
            let cfg = RandomMdpConfig {
                n_states: states,
                n_actions: actions,
                temperature: temp,
                gamma,
                ..Default::default()
            };
            let mdp = random_mdp(&cfg, &mut rng::stream(seed, 0))?;
            match out {
                Some(p) => mdp.save(p)?,
                None => println!("{}", mdp.to_json()?),
            }
        }
        Command::Bounds {
            env,
            n_features,
            on_policy,
        } => {
            let env = load_env(&env, seed)?;
            let features = match n_features {
                Some(k) => FeatureMap::random(&env.mdp, k, &mut rng::stream(seed, 1)),
                None => env.features.clone(),
            };
            let behavior = if on_policy { &env.init_policy } else { &env.behavior };
            let report = bound_report(&env.mdp, &env.init_policy, behavior, &features, &features)?;
            emit_json(out, &report)?;
        }
        Command::Plot { input } => {
            let out = require_out(out)?;
            emit_summary_svg(&input, out)?;
        }
        Command::Run { config_path } => run_config_file(&config_path, cli.strict)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
