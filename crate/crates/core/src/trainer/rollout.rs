use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::envs::GenerativeEnv;
use crate::error::{Error, Result};
use crate::math::{compensated_sum, mix_all};
use crate::nmdp::{Observation, Trajectory, DUMMY_ACTION, DUMMY_STATE};
use crate::policy::{sample_categorical, AsmPolicy, StepContext};

/// One sampled episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub trajectory: Trajectory,
    /// The goal was reached.
    pub success: bool,
}

/// Memoised `π_t(·, · | s̃, ã, o)` for symbolic observations. Valid while the
/// parameters do not change.
#[derive(Debug, Default)]
pub(crate) struct KernelCache {
    map: HashMap<(usize, usize, usize, usize), Vec<f64>>,
}

impl KernelCache {
    fn joint(&mut self, policy: &dyn AsmPolicy, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        let Observation::Symbol(o) = *ctx.obs else {
            return policy.joint_dist(ctx);
        };
        let tb = if policy.horizon_limit().is_some() { ctx.t } else { 0 };
        let key = (tb, ctx.s_prev, ctx.a_prev, o);
        if let Some(p) = self.map.get(&key) {
            return Ok(p.clone());
        }
        let p = policy.joint_dist(ctx)?;
        self.map.insert(key, p.clone());
        Ok(p)
    }
}

/// Samples one episode of at most `max_steps` steps.
///
/// The episode is marked terminated when the environment ends it or when the
/// step limit is reached with `limit_terminates` set (a fixed-horizon task).
pub fn rollout(
    env: &mut dyn GenerativeEnv,
    policy: &dyn AsmPolicy,
    max_steps: usize,
    limit_terminates: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    rollout_cached(env, policy, max_steps, limit_terminates, rng, &mut KernelCache::default())
}

pub(crate) fn rollout_cached(
    env: &mut dyn GenerativeEnv,
    policy: &dyn AsmPolicy,
    max_steps: usize,
    limit_terminates: bool,
    rng: &mut ChaCha8Rng,
    cache: &mut KernelCache,
) -> Result<Episode> {
    let n_a = policy.n_actions();
    if env.n_actions() != n_a {
        return Err(Error::Shape(format!(
            "policy has {n_a} actions but the environment has {}",
            env.n_actions()
        )));
    }
    let mut traj = Trajectory::start();
    let mut obs = env.reset(rng);
    let (mut s_prev, mut a_prev) = (DUMMY_STATE, DUMMY_ACTION);
    let mut success = false;
    for t in 1..=max_steps {
        let ctx = StepContext {
            s_prev,
            a_prev,
            obs: &obs,
            t,
        };
        let joint = cache.joint(policy, &ctx)?;
        let y = sample_categorical(rng, &joint);
        let (s, a) = (y / n_a, y % n_a);
        let out = env.step(rng, a)?;
        traj.push(obs, s, a, out.reward);
        success |= out.success;
        if out.terminated {
            traj.terminated = true;
            break;
        }
        if out.truncated {
            break;
        }
        if t == max_steps && limit_terminates {
            traj.terminated = true;
        }
        obs = out.obs;
        s_prev = s;
        a_prev = a;
    }
    Ok(Episode { trajectory: traj, success })
}

/// Runs episodes `0..n` with generators seeded by `seed_of(i)`, spreading them
/// over the given environments. Results come back in episode order and do
/// not depend on how many environments are supplied.
pub(crate) fn run_episodes(
    envs: &mut [Box<dyn GenerativeEnv>],
    policy: &dyn AsmPolicy,
    n: usize,
    max_steps: usize,
    limit_terminates: bool,
    seed_of: &(dyn Fn(usize) -> u64 + Sync),
) -> Result<Vec<Episode>> {
    let workers = envs.len().clamp(1, n.max(1));
    let job = |env: &mut dyn GenerativeEnv, w: usize| -> Vec<(usize, Result<Episode>)> {
        let mut cache = KernelCache::default();
        (w..n)
            .step_by(workers)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed_of(i));
                (i, rollout_cached(env, policy, max_steps, limit_terminates, &mut rng, &mut cache))
            })
            .collect()
    };
    let mut slots: Vec<Option<Result<Episode>>> = (0..n).map(|_| None).collect();
    if workers == 1 {
        for (i, r) in job(envs[0].as_mut(), 0) {
            slots[i] = Some(r);
        }
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = envs[..workers]
                .iter_mut()
                .enumerate()
                .map(|(w, env)| {
                    let job = &job;
                    scope.spawn(move || job(env.as_mut(), w))
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("rollout worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
    }
    slots.into_iter().map(|s| s.expect("every episode was assigned")).collect()
}

/// Summary of evaluation rollouts with frozen parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub n_episodes: usize,
    /// Mean undiscounted episode return.
    pub mean_return: f64,
    /// Total reward divided by total steps.
    pub mean_reward_per_step: f64,
    /// Fraction of episodes reaching the goal, for goal-directed tasks.
    pub success_rate: Option<f64>,
    /// Mean length of successful episodes for goal-directed tasks, of all
    /// episodes otherwise. `None` when no episode succeeded.
    pub mean_steps: Option<f64>,
}

impl EvalResult {
    /// Score used to pick the best checkpoint: reward per step on
    /// goal-directed tasks, mean return otherwise.
    pub fn score(&self) -> f64 {
        if self.success_rate.is_some() {
            self.mean_reward_per_step
        } else {
            self.mean_return
        }
    }
}

pub(crate) fn summarize(episodes: &[Episode], has_goal: bool) -> EvalResult {
    let n = episodes.len();
    let total_steps: usize = episodes.iter().map(|e| e.trajectory.len()).sum();
    let total_reward = compensated_sum(episodes.iter().map(|e| e.trajectory.total_reward()));
    let mean_return = total_reward / n as f64;
    let mean_reward_per_step = if total_steps == 0 {
        0.0
    } else {
        total_reward / total_steps as f64
    };
    let (success_rate, mean_steps) = if has_goal {
        let wins: Vec<usize> = episodes
            .iter()
            .filter(|e| e.success)
            .map(|e| e.trajectory.len())
            .collect();
        let mean = (!wins.is_empty()).then(|| wins.iter().sum::<usize>() as f64 / wins.len() as f64);
        (Some(wins.len() as f64 / n as f64), mean)
    } else {
        (None, Some(total_steps as f64 / n as f64))
    };
    EvalResult {
        n_episodes: n,
        mean_return,
        mean_reward_per_step,
        success_rate,
        mean_steps,
    }
}

const TAG_EVAL: u64 = 0xE7A1;

/// Rolls out `n_episodes` stochastic episodes of at most `max_steps` steps.
/// Episode `i` uses a generator derived from `(seed, i)`.
pub fn evaluate(
    policy: &dyn AsmPolicy,
    env: Box<dyn GenerativeEnv>,
    n_episodes: usize,
    max_steps: usize,
    seed: u64,
) -> Result<EvalResult> {
    let mut envs = vec![env];
    evaluate_on(&mut envs, policy, n_episodes, max_steps, seed, 0)
}

pub(crate) fn evaluate_on(
    envs: &mut [Box<dyn GenerativeEnv>],
    policy: &dyn AsmPolicy,
    n_episodes: usize,
    max_steps: usize,
    seed: u64,
    round: u64,
) -> Result<EvalResult> {
    if n_episodes == 0 {
        return Err(Error::config("evaluation needs at least one episode"));
    }
    let has_goal = envs[0].has_goal();
    let seed_of = move |i: usize| mix_all(seed, &[TAG_EVAL, round, i as u64]);
    let episodes = run_episodes(envs, policy, n_episodes, max_steps, false, &seed_of)?;
    Ok(summarize(&episodes, has_goal))
}
