//! Training loop: batched rollouts, the score-function estimate plus the
//! log-barrier term, an ascent step, periodic evaluation, metrics and
//! checkpoints.
//!
//! Every random draw comes from a generator seeded by hashing the run seed
//! with the iteration and episode index, so the output is bit-identical for a
//! fixed configuration whatever the number of rollout workers.

mod config;
mod metrics;
mod optim;
mod rollout;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub use config::{EarlyStop, OptimizerConfig, PolicyConfig, TrainConfig};
pub use metrics::{csv_header, strip_wall_clock, write_csv, MetricsRow, CSV_COLUMNS};
pub use optim::{stepsize, Adam, Optimizer, Schedule};
pub use rollout::{evaluate, rollout, EvalResult, Episode};

use crate::envs::GenerativeEnv;
use crate::error::{Error, Result};
use crate::grad::{batch_estimate, log_barrier_grad};
use crate::math::{l2_norm, mix_all};
use crate::nmdp::{ReturnSpec, Trajectory};
use crate::oracle::{constants, SmoothnessConstants};
use crate::policy::{save_checkpoint, AsmPolicy, Policy};
use rollout::{evaluate_on, run_episodes};

const TAG_INIT: u64 = 0x1417;
const TAG_TRAIN: u64 = 0x7EA1;

/// Relative slack on the estimator-norm assertion, for rounding only.
const NORM_SLACK: f64 = 1e-9;

/// Exact-gradient callback used to track `‖∇J(θ_k)‖²` on enumerable tasks.
pub type ExactGradientFn<'a> = &'a (dyn Fn(&dyn AsmPolicy) -> Result<Vec<f64>> + Sync);

/// Run-time settings that do not affect results.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory for `metrics.csv`, `manifest.json` and checkpoints.
    pub out_dir: Option<PathBuf>,
    /// Rollout workers; `0` or `1` runs on the calling thread.
    pub workers: usize,
    /// Skip per-evaluation checkpoints (the best and final ones are still written).
    pub sparse_checkpoints: bool,
}

#[derive(Clone, Copy, Default)]
pub struct TrainHooks<'a> {
    pub exact_gradient: Option<ExactGradientFn<'a>>,
}

/// What a run produced.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub rows: Vec<MetricsRow>,
    pub iterations: u64,
    pub env_steps: u64,
    /// Best evaluation score and the step count it was reached at.
    pub best: Option<(f64, u64)>,
    /// Largest single-episode `‖ĝ‖ / (C/2)` seen under a tabular policy.
    pub max_norm_ratio: f64,
    /// Number of clipped network updates.
    pub clipped: u64,
    /// `‖∇J(θ_k)‖²` for every iteration when an exact gradient was supplied.
    pub exact_sq_norms: Vec<f64>,
    pub constants: Option<SmoothnessConstants>,
    pub stopped_early: bool,
}

/// Constructs the run's environment.
pub fn build_env(cfg: &TrainConfig) -> Result<Box<dyn GenerativeEnv>> {
    crate::envs::make_env(&cfg.env, cfg.env_seed, &cfg.env_params)
}

/// Initial policy for the run, drawn from the run seed.
pub fn init_policy(cfg: &TrainConfig, env: &dyn GenerativeEnv) -> Result<Policy> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_all(cfg.seed, &[TAG_INIT]));
    cfg.policy.build(env, cfg.n_agent_states, cfg.step_limit(env)?, &mut rng)
}

/// `β`, `C` for the run, from configured or intrinsic score bounds.
pub fn run_constants(cfg: &TrainConfig, policy: &dyn AsmPolicy, r_max: f64) -> Result<Option<SmoothnessConstants>> {
    cfg.score_bounds
        .or_else(|| policy.score_bounds())
        .map(|b| constants(r_max, b.g, b.m, &cfg.mode))
        .transpose()
}

fn commit_hash() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

struct Output {
    dir: PathBuf,
    csv: BufWriter<fs::File>,
    sparse: bool,
}

impl Output {
    fn open(dir: &Path, sparse: bool) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut csv = BufWriter::new(fs::File::create(dir.join("metrics.csv"))?);
        writeln!(csv, "{}", csv_header())?;
        csv.flush()?;
        Ok(Output {
            dir: dir.to_path_buf(),
            csv,
            sparse,
        })
    }

    fn row(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.csv, "{}", row.csv_line())?;
        self.csv.flush()?;
        Ok(())
    }

    fn checkpoint(&self, name: &str, policy: &dyn AsmPolicy) -> Result<()> {
        save_checkpoint(self.dir.join(name), policy)
    }

    fn manifest(&self, value: &serde_json::Value) -> Result<()> {
        fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(value)?)?;
        Ok(())
    }
}

struct Loop<'a> {
    cfg: &'a TrainConfig,
    envs: Vec<Box<dyn GenerativeEnv>>,
    step_limit: usize,
    start: Instant,
    out: Option<Output>,
    rows: Vec<MetricsRow>,
    best: Option<(f64, u64)>,
    round: u64,
}

impl Loop<'_> {
    fn evaluate(&mut self, policy: &Policy, env_steps: u64, iteration: u64, grad: (f64, f64, f64)) -> Result<EvalResult> {
        let cfg = self.cfg;
        let eval = evaluate_on(&mut self.envs, policy, cfg.eval_episodes, self.step_limit, cfg.seed, self.round)?;
        self.round += 1;
        let (grad_norm, running_avg_sq_grad_norm, stepsize) = grad;
        let row = MetricsRow {
            env_steps,
            iteration,
            mean_return: eval.mean_return,
            mean_reward_per_step: eval.mean_reward_per_step,
            success_rate: eval.success_rate,
            mean_steps: eval.mean_steps,
            grad_norm,
            running_avg_sq_grad_norm,
            stepsize,
            wall_ms: self.start.elapsed().as_millis() as u64,
        };
        let score = eval.score();
        let improved = self.best.is_none_or(|(b, _)| score > b);
        if improved {
            self.best = Some((score, env_steps));
        }
        if let Some(out) = &mut self.out {
            out.row(&row)?;
            if !out.sparse {
                out.checkpoint(&format!("ckpt_{env_steps}.bin"), policy)?;
            }
            if improved {
                out.checkpoint("ckpt_best.bin", policy)?;
            }
        }
        self.rows.push(row);
        Ok(eval)
    }
}

/// Trains a policy according to `cfg`.
pub fn train(cfg: &TrainConfig, opts: &TrainOptions, hooks: &TrainHooks<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let workers = opts.workers.max(1);
    let envs = (0..workers).map(|_| build_env(cfg)).collect::<Result<Vec<_>>>()?;
    let step_limit = cfg.step_limit(envs[0].as_ref())?;
    let r_max = envs[0].r_max();
    let mut policy = init_policy(cfg, envs[0].as_ref())?;
    let consts = run_constants(cfg, &policy, r_max)?;
    let norm_bound = if policy.is_tabular() {
        consts.map(|c| c.estimator_norm_bound())
    } else {
        None
    };
    // Networks have no uniform score bound; clip relative to the factorized
    // tabular one instead.
    let clip_at = if policy.is_tabular() {
        None
    } else {
        Some(cfg.clip_factor * constants(r_max, 2.0, 1.0, &cfg.mode)?.estimator_norm_bound())
    };
    let mut optimizer = cfg.optimizer(policy.dim(), consts, r_max, step_limit)?;

    let mut manifest = json!({
        "config": cfg,
        "seed": cfg.seed,
        "commit": commit_hash(),
        "crate_version": env!("CARGO_PKG_VERSION"),
        "constants": consts,
        "dim": policy.dim(),
        "step_limit": step_limit,
    });
    let out = match &opts.out_dir {
        Some(dir) => {
            let out = Output::open(dir, opts.sparse_checkpoints)?;
            out.manifest(&manifest)?;
            Some(out)
        }
        None => None,
    };
    let mut lp = Loop {
        cfg,
        envs,
        step_limit,
        start: Instant::now(),
        out,
        rows: Vec::new(),
        best: None,
        round: 0,
    };

    let episodic = matches!(cfg.mode, ReturnSpec::Episodic { .. });
    let mut env_steps = 0u64;
    let mut k = 0u64;
    let mut sum_sq = 0.0;
    let mut last = (0.0, 0.0, 0.0);
    let mut max_norm_ratio = 0.0f64;
    let mut clipped = 0u64;
    let mut exact_sq_norms = Vec::new();
    let mut stopped_early = false;

    let first = lp.evaluate(&policy, 0, 0, last)?;
    let mut next_eval = cfg.eval_every;
    if cfg.early_stop.is_some_and(|s| s.reached(&first)) {
        stopped_early = true;
    }

    while !stopped_early && env_steps < cfg.total_env_steps {
        k += 1;
        let exact = hooks.exact_gradient.map(|f| f(&policy)).transpose()?;
        let seed = cfg.seed;
        let seed_of = move |i: usize| mix_all(seed, &[TAG_TRAIN, k, i as u64]);
        let episodes = run_episodes(&mut lp.envs, &policy, cfg.batch_size, step_limit, episodic, &seed_of)?;
        let trajs: Vec<Trajectory> = episodes.into_iter().map(|e| e.trajectory).collect();
        env_steps += trajs.iter().map(|t| t.len() as u64).sum::<u64>();

        let est = batch_estimate(&policy, &trajs, &cfg.mode, norm_bound.is_some())?;
        if let Some(bound) = norm_bound {
            for &n in &est.episode_norms {
                max_norm_ratio = max_norm_ratio.max(n / bound);
                if n > bound * (1.0 + NORM_SLACK) {
                    return Err(Error::NormBound { norm: n, bound });
                }
            }
        }
        let mut grad = est.vector;
        let est_norm = l2_norm(&grad);
        if let Some(c) = clip_at {
            if est_norm > c {
                if clipped == 0 {
                    eprintln!("warning: estimate norm {est_norm:.3e} clipped to {c:.3e} at iteration {k}");
                }
                clipped += 1;
                grad.iter_mut().for_each(|g| *g *= c / est_norm);
            }
        }
        if cfg.barrier > 0.0 {
            let b = log_barrier_grad(&policy, &trajs, cfg.barrier)?;
            grad.iter_mut().zip(&b.vector).for_each(|(g, x)| *g += x);
        }
        let tracked = match &exact {
            Some(e) => {
                let sq = e.iter().map(|x| x * x).sum::<f64>();
                exact_sq_norms.push(sq);
                sq
            }
            None => est_norm * est_norm,
        };
        sum_sq += tracked;

        let last_good = policy.params().to_vec();
        let step = optimizer.step(policy.params_mut(), &grad, k);
        let alpha = match step {
            Ok(a) if policy.params().iter().all(|p| p.is_finite()) => a,
            other => {
                policy.params_mut().copy_from_slice(&last_good);
                if let Some(out) = &lp.out {
                    out.checkpoint("ckpt_last_good.bin", &policy)?;
                }
                return Err(match other {
                    Err(e) => e,
                    Ok(_) => Error::NonFinite(format!("parameters after iteration {k}")),
                });
            }
        };
        last = (tracked.sqrt(), sum_sq / k as f64, alpha);

        if env_steps >= next_eval {
            let eval = lp.evaluate(&policy, env_steps, k, last)?;
            next_eval = (env_steps / cfg.eval_every + 1) * cfg.eval_every;
            if cfg.early_stop.is_some_and(|s| s.reached(&eval)) {
                stopped_early = true;
            }
        }
    }
    if lp.rows.last().is_none_or(|r| r.env_steps != env_steps) {
        lp.evaluate(&policy, env_steps, k, last)?;
    }
    if let Some(out) = &lp.out {
        out.checkpoint(&format!("ckpt_{env_steps}.bin"), &policy)?;
        manifest["result"] = json!({
            "iterations": k,
            "env_steps": env_steps,
            "best_score": lp.best.map(|b| b.0),
            "best_env_steps": lp.best.map(|b| b.1),
            "stopped_early": stopped_early,
            "max_norm_ratio": max_norm_ratio,
            "clipped_updates": clipped,
        });
        out.manifest(&manifest)?;
    }
    Ok(TrainOutcome {
        policy,
        rows: lp.rows,
        iterations: k,
        env_steps,
        best: lp.best,
        max_norm_ratio,
        clipped,
        exact_sq_norms,
        constants: consts,
        stopped_early,
    })
}
