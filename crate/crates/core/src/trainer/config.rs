use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, Optimizer, Schedule};
use super::rollout::EvalResult;
use crate::envs::{EnvParams, GenerativeEnv, ObsSpace};
use crate::error::{Error, Result};
use crate::nmdp::{Alphabet, ReturnSpec};
use crate::oracle::SmoothnessConstants;
use crate::policy::{MlpAsm, ObsInput, Policy, ScoreBounds, TabularJointSoftmax, TabularSoftmaxAsm, TimeBlocks};

/// Parametrization of the ASM policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    /// Separate softmax tables for `ν` and `φ`.
    Tabular {
        #[serde(default)]
        per_step: bool,
        /// Initial logits uniform in `[-init_scale, init_scale]`.
        #[serde(default)]
        init_scale: f64,
    },
    /// One softmax table over `(s, a)` per context.
    TabularJoint {
        #[serde(default)]
        per_step: bool,
        #[serde(default)]
        init_scale: f64,
    },
    /// Two tanh networks with Glorot-uniform initial weights.
    Mlp { hidden: usize },
}

impl PolicyConfig {
    pub(crate) fn build(
        &self,
        env: &dyn GenerativeEnv,
        n_agent_states: usize,
        step_limit: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Policy> {
        let n_actions = env.n_actions();
        let table = |per_step: bool| -> Result<(Alphabet, TimeBlocks)> {
            let ObsSpace::Discrete(n_obs) = env.obs_space() else {
                return Err(Error::config(format!(
                    "tabular policies need a finite observation alphabet; `{}` emits real vectors",
                    env.name()
                )));
            };
            let blocks = if per_step {
                TimeBlocks::PerStep { horizon: step_limit }
            } else {
                TimeBlocks::Shared
            };
            Ok((Alphabet::new(n_obs, n_actions, n_agent_states)?, blocks))
        };
        Ok(match *self {
            PolicyConfig::Tabular { per_step, init_scale } => {
                let (alphabet, blocks) = table(per_step)?;
                Policy::Tabular(TabularSoftmaxAsm::random(alphabet, blocks, init_scale, rng))
            }
            PolicyConfig::TabularJoint { per_step, init_scale } => {
                let (alphabet, blocks) = table(per_step)?;
                Policy::Joint(TabularJointSoftmax::random(alphabet, blocks, init_scale, rng))
            }
            PolicyConfig::Mlp { hidden } => {
                let obs_input = match env.obs_space() {
                    ObsSpace::Discrete(n_obs) => ObsInput::OneHot { n_obs },
                    ObsSpace::Real { dim, scale } => ObsInput::Real { dim, scale },
                };
                Policy::Mlp(MlpAsm::xavier(n_agent_states, n_actions, obs_input, hidden, rng)?)
            }
        })
    }
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

/// Update rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    SgdConstant,
    SgdConstantWide,
    SgdSqrtDecay,
    SgdCustom {
        c: f64,
        p: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

impl OptimizerConfig {
    pub fn schedule(&self) -> Option<Schedule> {
        match *self {
            OptimizerConfig::SgdConstant => Some(Schedule::Constant),
            OptimizerConfig::SgdConstantWide => Some(Schedule::ConstantWide),
            OptimizerConfig::SgdSqrtDecay => Some(Schedule::SqrtDecay),
            OptimizerConfig::SgdCustom { c, p } => Some(Schedule::Custom { c, p }),
            OptimizerConfig::Adam { .. } => None,
        }
    }
}

/// Stop as soon as an evaluation meets every given threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    #[serde(default)]
    pub min_success_rate: Option<f64>,
    #[serde(default)]
    pub max_mean_steps: Option<f64>,
    #[serde(default)]
    pub min_score: Option<f64>,
}

impl EarlyStop {
    pub fn reached(&self, eval: &EvalResult) -> bool {
        let success = self
            .min_success_rate
            .is_none_or(|m| eval.success_rate.is_some_and(|s| s >= m));
        let steps = self.max_mean_steps.is_none_or(|m| eval.mean_steps.is_some_and(|s| s <= m));
        let score = self.min_score.is_none_or(|m| eval.score() >= m);
        success && steps && score
    }
}

fn default_delta() -> f64 {
    0.1
}

fn default_clip() -> f64 {
    10.0
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub env: String,
    #[serde(default)]
    pub env_params: EnvParams,
    /// Instance seed for seeded environment families such as `tiny`.
    #[serde(default)]
    pub env_seed: u64,
    pub policy: PolicyConfig,
    pub n_agent_states: usize,
    pub mode: ReturnSpec,
    pub optimizer: OptimizerConfig,
    /// Estimate of `sup J − J(θ₁)`; defaults to `r_max·H` or `r_max/(1−γ)`.
    #[serde(default)]
    pub delta1: Option<f64>,
    /// Planned iteration count `K` for the constant schedules; defaults to
    /// `⌈total_env_steps / (batch_size · step limit)⌉`.
    #[serde(default)]
    pub k_budget: Option<u64>,
    /// Confidence level of the high-probability guarantee.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Score bounds `(G, M)` for the SGD schedules; tabular policies provide
    /// their own.
    #[serde(default)]
    pub score_bounds: Option<ScoreBounds>,
    pub batch_size: usize,
    /// Log-barrier coefficient `λ`.
    #[serde(default)]
    pub barrier: f64,
    pub total_env_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seed: u64,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
    /// Network estimates above this multiple of the tabular norm bound are clipped.
    #[serde(default = "default_clip")]
    pub clip_factor: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        if self.env.is_empty() {
            return Err(Error::config("env: environment name is missing"));
        }
        if self.n_agent_states == 0 {
            return Err(Error::config("n_agent_states must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.total_env_steps == 0 {
            return Err(Error::config("total_env_steps must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be >= 1"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if let Some(d) = self.delta1 {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::config(format!("delta1 must be positive, got {d}")));
            }
        }
        if self.k_budget == Some(0) {
            return Err(Error::config("k_budget must be >= 1"));
        }
        if !(self.barrier.is_finite() && self.barrier >= 0.0) {
            return Err(Error::config(format!("barrier must be >= 0, got {}", self.barrier)));
        }
        if !(self.clip_factor.is_finite() && self.clip_factor > 0.0) {
            return Err(Error::config("clip_factor must be positive"));
        }
        match self.policy {
            PolicyConfig::Mlp { hidden: 0 } => return Err(Error::config("policy.hidden must be >= 1")),
            PolicyConfig::Tabular { init_scale, .. } | PolicyConfig::TabularJoint { init_scale, .. }
                if !(init_scale.is_finite() && init_scale >= 0.0) =>
            {
                return Err(Error::config("policy.init_scale must be >= 0"));
            }
            _ => {}
        }
        if let Some(schedule) = self.optimizer.schedule() {
            schedule.validate()?;
        }
        Ok(())
    }

    /// Steps per episode: the horizon (episodic) or `min(T_max, env cap)`.
    pub fn step_limit(&self, env: &dyn GenerativeEnv) -> Result<usize> {
        match self.mode {
            ReturnSpec::Episodic { horizon } => {
                if let Some(cap) = env.max_steps() {
                    if cap < horizon {
                        return Err(Error::config(format!(
                            "episodic horizon {horizon} exceeds the {cap}-step cap of `{}`",
                            env.name()
                        )));
                    }
                }
                Ok(horizon)
            }
            ReturnSpec::Discounted { t_max, .. } => Ok(env.max_steps().map_or(t_max, |cap| cap.min(t_max))),
        }
    }

    /// Default `Δ₁`: `r_max·H` or `r_max/(1−γ)`.
    pub fn delta1_or_default(&self, r_max: f64) -> f64 {
        self.delta1.unwrap_or(match self.mode {
            ReturnSpec::Episodic { horizon } => r_max * horizon as f64,
            ReturnSpec::Discounted { gamma, .. } => r_max / (1.0 - gamma),
        })
    }

    pub fn k_budget_or_default(&self, step_limit: usize) -> u64 {
        self.k_budget.unwrap_or_else(|| {
            let per_iter = (self.batch_size * step_limit.max(1)) as u64;
            self.total_env_steps.div_ceil(per_iter).max(1)
        })
    }

    pub(crate) fn optimizer(
        &self,
        dim: usize,
        constants: Option<SmoothnessConstants>,
        r_max: f64,
        step_limit: usize,
    ) -> Result<Optimizer> {
        if let OptimizerConfig::Adam { lr, beta1, beta2, eps } = self.optimizer {
            return Ok(Optimizer::Adam(Adam::new(dim, lr, beta1, beta2, eps)?));
        }
        let schedule = self.optimizer.schedule().expect("non-Adam optimizers have a schedule");
        let constants = constants.ok_or_else(|| {
            Error::config("SGD schedules need score bounds; set score_bounds for network policies")
        })?;
        Ok(Optimizer::Sgd {
            schedule,
            constants,
            delta1: self.delta1_or_default(r_max),
            k_budget: self.k_budget_or_default(step_limit),
            delta: self.delta,
        })
    }
}
