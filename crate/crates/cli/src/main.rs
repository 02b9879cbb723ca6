use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asmpg::envs::{make_env, EnvParams};
use asmpg::nmdp::{discounted_return, read_jsonl, write_jsonl, ReturnSpec};
use asmpg::oracle::{constants, SmoothnessConstants};
use asmpg::policy::{load_checkpoint, AsmPolicy, StepTransition};
use asmpg::trainer::{evaluate, rollout, stepsize, train, EvalResult, Schedule, TrainConfig, TrainHooks, TrainOptions};
use asmpg::verify::{run_suite, Suite, VerifyOptions};
use asmpg::Error;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Schema version accepted in run configs.
const CONFIG_VERSION: i64 = 1;

#[derive(Parser)]
#[command(name = "asmpg", version, about = "Agent-state Markov policy gradient for non-Markovian decision processes")]
struct Cli {
    /// Rollout and enumeration threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML or JSON run config.
    Train(TrainArgs),
    /// Run oracle check suites and print a JSON report.
    Verify(VerifyArgs),
    /// Print smoothness constants and the constant stepsize.
    Constants(ConstantsArgs),
    /// Evaluate a checkpoint on an environment.
    Eval(EvalArgs),
    /// Summarise recorded trajectories.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct TrainArgs {
    config: PathBuf,
    /// Overrides the config seed. Repeat to train one run per seed.
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long, env = "ASMPG_OUT")]
    out_dir: Option<PathBuf>,
    /// Overrides `total_env_steps`.
    #[arg(long)]
    total_env_steps: Option<u64>,
    /// Write only the best and final checkpoints.
    #[arg(long)]
    sparse_checkpoints: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value = "all")]
    suite: String,
    /// Maximum number of enumerated leaves per oracle call.
    #[arg(long, default_value_t = asmpg::oracle::DEFAULT_BUDGET)]
    budget: u128,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConstantsArgs {
    #[arg(long)]
    rmax: f64,
    #[arg(long = "G")]
    g: f64,
    #[arg(long = "M")]
    m: f64,
    #[arg(long = "H", conflicts_with = "gamma", required_unless_present = "gamma")]
    horizon: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Gap estimate; defaults to `r_max·H` or `r_max/(1−γ)`.
    #[arg(long)]
    delta1: Option<f64>,
    /// Planned iteration count.
    #[arg(long = "K", default_value_t = 1000)]
    k: u64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    env: String,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    max_steps: usize,
    /// Environment parameter as `key=value`; values are parsed as JSON when possible.
    #[arg(long = "env-param", value_parser = parse_kv)]
    env_params: Vec<(String, serde_json::Value)>,
    #[arg(long, default_value_t = 0)]
    env_seed: u64,
    /// Append the result as a CSV row (with header when the file is new).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Record this many additional episodes as JSON lines.
    #[arg(long, requires = "record_episodes")]
    record: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    record_episodes: usize,
}

#[derive(Args)]
struct ReplayArgs {
    trajectories: PathBuf,
    /// Also report discounted returns.
    #[arg(long)]
    gamma: Option<f64>,
    /// Report the log-probability of each trajectory's agent states and actions.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn parse_kv(s: &str) -> Result<(String, serde_json::Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// Failure with its process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) | Error::NormBound { .. } => 3,
        Error::Budget { .. } => 4,
        _ => 2,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::config(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::config(e.to_string())
    }
}

/// Reads a versioned run config. The format follows the extension; `.json`
/// is JSON, anything else TOML.
fn load_config(path: &Path) -> Result<TrainConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let mut value: serde_json::Value = if is_json {
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?
    } else {
        let t: toml::Table = toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t)?
    };
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Failure::config("config must be a table"))?;
    match obj.remove("version").map(|v| v.as_i64()) {
        Some(Some(CONFIG_VERSION)) => {}
        Some(_) => return Err(Failure::config(format!("unsupported config version; expected {CONFIG_VERSION}"))),
        None => return Err(Failure::config("config is missing `version`")),
    }
    let cfg: TrainConfig =
        serde_json::from_value(value).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Spread {
    mean: f64,
    sample_sd: f64,
    min: f64,
    max: f64,
}

fn spread(xs: &[f64]) -> Spread {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Spread {
        mean,
        sample_sd: var.sqrt(),
        min: xs.iter().copied().fold(f64::INFINITY, f64::min),
        max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Serialize)]
struct SeedResult {
    seed: u64,
    final_score: f64,
    best_score: f64,
    best_env_steps: u64,
    env_steps: u64,
}

fn cmd_train(args: TrainArgs, workers: usize) -> Result<(), Failure> {
    let mut base = load_config(&args.config)?;
    if let Some(n) = args.total_env_steps {
        base.total_env_steps = n;
    }
    let seeds = if args.seed.is_empty() { vec![base.seed] } else { args.seed.clone() };
    let out_root = args.out_dir.unwrap_or_else(|| PathBuf::from("asmpg-out"));
    let mut results = Vec::new();
    for &seed in &seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.validate()?;
        let dir = if seeds.len() == 1 {
            out_root.clone()
        } else {
            out_root.join(format!("seed_{seed}"))
        };
        let opts = TrainOptions {
            out_dir: Some(dir.clone()),
            workers,
            sparse_checkpoints: args.sparse_checkpoints,
        };
        let out = train(&cfg, &opts, &TrainHooks::default())?;
        let last = out.rows.last().expect("training records at least one evaluation");
        let final_score = if last.success_rate.is_some() {
            last.mean_reward_per_step
        } else {
            last.mean_return
        };
        let (best_score, best_env_steps) = out.best.unwrap_or((final_score, out.env_steps));
        eprintln!(
            "seed {seed}: {} iterations, {} env steps, final score {final_score:.6}, best {best_score:.6} at {best_env_steps}; output in {}",
            out.iterations,
            out.env_steps,
            dir.display()
        );
        if out.clipped > 0 {
            eprintln!("warning: {} network updates were clipped", out.clipped);
        }
        results.push(SeedResult {
            seed,
            final_score,
            best_score,
            best_env_steps,
            env_steps: out.env_steps,
        });
    }
    if seeds.len() > 1 {
        let finals: Vec<f64> = results.iter().map(|r| r.final_score).collect();
        let bests: Vec<f64> = results.iter().map(|r| r.best_score).collect();
        let summary = serde_json::json!({
            "runs": results,
            "final_score": spread(&finals),
            "best_score": spread(&bests),
        });
        fs::write(out_root.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        println!("{}", serde_json::to_string_pretty(&summary)?);
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs, workers: usize) -> Result<(), Failure> {
    let suite: Suite = args.suite.parse()?;
    let opts = VerifyOptions {
        budget: args.budget,
        workers: workers.max(1),
        seed: args.seed,
    };
    let report = run_suite(suite, &opts).map_err(|e| Failure {
        code: exit_code(&e.source),
        message: format!("check `{}`: {}", e.check, e.source),
    })?;
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(path) = &args.out {
        fs::write(path, &json)?;
    }
    if report.pass {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        Err(Failure {
            code: 1,
            message: format!("failed checks: {}", failed.join(", ")),
        })
    }
}

#[derive(Serialize)]
struct ConstantsReport {
    #[serde(flatten)]
    constants: SmoothnessConstants,
    estimator_norm_bound: f64,
    delta1: f64,
    k: u64,
    delta: f64,
    constant_stepsize: f64,
    constant_wide_stepsize: f64,
}

fn cmd_constants(args: ConstantsArgs) -> Result<(), Failure> {
    let spec = match (args.horizon, args.gamma) {
        (Some(h), None) => ReturnSpec::episodic(h)?,
        (None, Some(g)) => ReturnSpec::discounted(g, 1)?,
        _ => return Err(Failure::config("give exactly one of --H and --gamma")),
    };
    let c = constants(args.rmax, args.g, args.m, &spec)?;
    let delta1 = args.delta1.unwrap_or(match spec {
        ReturnSpec::Episodic { horizon } => args.rmax * horizon as f64,
        ReturnSpec::Discounted { gamma, .. } => args.rmax / (1.0 - gamma),
    });
    let report = ConstantsReport {
        constants: c,
        estimator_norm_bound: c.estimator_norm_bound(),
        delta1,
        k: args.k,
        delta: args.delta,
        constant_stepsize: stepsize(&Schedule::Constant, 1, &c, delta1, args.k, args.delta)?,
        constant_wide_stepsize: stepsize(&Schedule::ConstantWide, 1, &c, delta1, args.k, args.delta)?,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    if args.episodes == 0 {
        return Err(Failure::config("--episodes must be >= 1"));
    }
    let policy = load_checkpoint(&args.checkpoint)?;
    let params: EnvParams = args.env_params.into_iter().collect();
    let env = make_env(&args.env, args.env_seed, &params)?;
    let max_steps = env.max_steps().map_or(args.max_steps, |cap| cap.min(args.max_steps));
    let result: EvalResult = evaluate(policy.as_dyn(), env, args.episodes, max_steps, args.seed)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    if let Some(path) = &args.csv {
        let fresh = !path.exists();
        let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "checkpoint,env,episodes,seed,mean_return,mean_reward_per_step,success_rate,mean_steps")?;
        }
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            args.checkpoint.display(),
            args.env,
            result.n_episodes,
            args.seed,
            result.mean_return,
            result.mean_reward_per_step,
            opt(result.success_rate),
            opt(result.mean_steps)
        )?;
    }
    if let Some(path) = &args.record {
        let mut env = make_env(&args.env, args.env_seed, &params)?;
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let trajs = (0..args.record_episodes)
            .map(|_| rollout(env.as_mut(), policy.as_dyn(), max_steps, false, &mut rng).map(|e| e.trajectory))
            .collect::<asmpg::Result<Vec<_>>>()?;
        write_jsonl(fs::File::create(path)?, &trajs)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ReplayLine {
    index: usize,
    len: usize,
    terminated: bool,
    total_reward: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    discounted_return: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    log_prob: Option<f64>,
}

fn log_prob(policy: &dyn AsmPolicy, traj: &asmpg::nmdp::Trajectory) -> asmpg::Result<f64> {
    (1..=traj.len())
        .map(|t| StepTransition::from_trajectory(traj, t).and_then(|tr| policy.log_prob_step(&tr)))
        .sum()
}

fn cmd_replay(args: ReplayArgs) -> Result<(), Failure> {
    let trajs = read_jsonl(BufReader::new(fs::File::open(&args.trajectories)?))?;
    let policy = args.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for (index, traj) in trajs.iter().enumerate() {
        let discounted = match args.gamma {
            Some(_) if traj.is_empty() => Some(0.0),
            Some(g) => Some(discounted_return(traj, 1, g)?),
            None => None,
        };
        let line = ReplayLine {
            index,
            len: traj.len(),
            terminated: traj.terminated,
            total_reward: traj.total_reward(),
            discounted_return: discounted,
            log_prob: policy.as_ref().map(|p| log_prob(p.as_dyn(), traj)).transpose()?,
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, cli.workers),
        Command::Verify(a) => cmd_verify(a, cli.workers),
        Command::Constants(a) => cmd_constants(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
