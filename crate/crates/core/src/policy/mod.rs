//! Agent-state Markov (ASM) policies.
//!
//! An ASM policy is a pair `(ν, φ)`: the agent-state kernel
//! `ν_t(s | s̃, ã, o)` and the control kernel `φ_t(a | s)`. Their product is
//! the combined kernel `π_t(s, a | s̃, ã, o)` whose score drives the gradient
//! estimators. Three parametrizations are provided:
//!
//! * [`TabularSoftmaxAsm`]: separate softmax tables for `ν` and `φ`;
//! * [`TabularJointSoftmax`]: one softmax table over `(s, a)` per context,
//!   i.e. the combined-kernel parametrization with `G = √2`, `M = 1`;
//! * [`MlpAsm`]: two tanh MLPs with hand-written reverse-mode gradients.

mod checkpoint;
mod joint;
mod mlp;
mod tabular;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nmdp::{Observation, Trajectory};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use joint::TabularJointSoftmax;
pub use mlp::{MlpAsm, ObsInput};
pub use tabular::TabularSoftmaxAsm;

/// Conditioning of the step-`t` kernel: `(s_{t-1}, a_{t-1}, o_t)`.
#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a> {
    pub s_prev: usize,
    pub a_prev: usize,
    pub obs: &'a Observation,
    /// 1-based time step.
    pub t: usize,
}

/// One step `(s_{t-1}, a_{t-1}, o_t) → (s_t, a_t)`.
#[derive(Clone, Copy, Debug)]
pub struct StepTransition<'a> {
    pub ctx: StepContext<'a>,
    pub s: usize,
    pub a: usize,
}

impl<'a> StepTransition<'a> {
    /// Transition at 1-based step `t` of `traj`.
    pub fn from_trajectory(traj: &'a Trajectory, t: usize) -> Result<Self> {
        if t == 0 || t > traj.len() {
            return Err(Error::bounds("t", t, traj.len()));
        }
        Ok(StepTransition {
            ctx: StepContext {
                s_prev: traj.agent_states[t - 1],
                a_prev: traj.actions[t - 1],
                obs: &traj.obs[t - 1],
                t,
            },
            s: traj.agent_states[t],
            a: traj.actions[t],
        })
    }
}

/// Whether parameters are shared across time or split per step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeBlocks {
    Shared,
    PerStep { horizon: usize },
}

impl TimeBlocks {
    pub fn count(&self) -> usize {
        match *self {
            TimeBlocks::Shared => 1,
            TimeBlocks::PerStep { horizon } => horizon,
        }
    }

    /// Block index used at 1-based step `t`.
    pub fn block(&self, t: usize) -> Result<usize> {
        match *self {
            TimeBlocks::Shared => Ok(0),
            TimeBlocks::PerStep { horizon } => {
                if t == 0 || t > horizon {
                    Err(Error::bounds("t", t, horizon))
                } else {
                    Ok(t - 1)
                }
            }
        }
    }

    pub fn horizon_limit(&self) -> Option<usize> {
        match *self {
            TimeBlocks::Shared => None,
            TimeBlocks::PerStep { horizon } => Some(horizon),
        }
    }
}

/// Which kernel a contiguous parameter slice belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Nu,
    Phi,
    Joint,
}

/// A contiguous slice of the parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    pub head: Head,
    pub time_block: usize,
    pub offset: usize,
    pub len: usize,
}

/// Uniform score and Hessian bounds `(G, M)` satisfied by a parametrization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreBounds {
    pub g: f64,
    pub m: f64,
}

/// Hessian of `log π` restricted to the parameters it depends on.
#[derive(Clone, Debug)]
pub struct ActiveHessian {
    pub indices: Vec<usize>,
    /// Row-major `indices.len() × indices.len()` matrix.
    pub matrix: Vec<f64>,
}

impl ActiveHessian {
    pub fn size(&self) -> usize {
        self.indices.len()
    }

    pub fn spectral_norm(&self) -> f64 {
        crate::math::symmetric_spectral_norm(self.size(), &self.matrix)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        crate::math::symmetric_eigenvalues(self.size(), &self.matrix)
    }
}

/// Layout descriptor stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "parametrization", rename_all = "snake_case")]
pub enum PolicyDescriptor {
    Tabular {
        n_obs: usize,
        n_actions: usize,
        n_agent_states: usize,
        time_blocks: TimeBlocks,
    },
    TabularJoint {
        n_obs: usize,
        n_actions: usize,
        n_agent_states: usize,
        time_blocks: TimeBlocks,
    },
    Mlp {
        n_actions: usize,
        n_agent_states: usize,
        obs_input: ObsInput,
        hidden: usize,
    },
}

/// Common interface of every ASM parametrization.
pub trait AsmPolicy: Send + Sync {
    fn descriptor(&self) -> PolicyDescriptor;
    fn n_agent_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn blocks(&self) -> Vec<ParamBlock>;

    fn dim(&self) -> usize {
        self.params().len()
    }

    /// Largest step the parameters cover, `None` when shared across time.
    fn horizon_limit(&self) -> Option<usize>;

    /// `π_t(s, a | s̃, ã, o)` laid out row-major as `s * n_actions + a`.
    fn joint_dist(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>>;

    /// `log π_t(s_t, a_t | s_{t-1}, a_{t-1}, o_t)`.
    fn log_prob_step(&self, tr: &StepTransition<'_>) -> Result<f64>;

    /// Adds `weight · ∇_θ log π_t(s_t, a_t | ·)` into `out`.
    fn add_score(&self, tr: &StepTransition<'_>, weight: f64, out: &mut [f64]) -> Result<()>;

    fn score_step(&self, tr: &StepTransition<'_>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.add_score(tr, 1.0, &mut out)?;
        Ok(out)
    }

    /// Adds `Σ_i w_i · ∇_θ log π(s_i, a_i | ·)` over a list of weighted transitions.
    fn add_scores(&self, steps: &[(StepTransition<'_>, f64)], out: &mut [f64]) -> Result<()> {
        steps.iter().try_for_each(|(tr, w)| self.add_score(tr, *w, out))
    }

    /// Draws `(s_t, a_t)` and returns them with their joint log-probability.
    fn sample_step(&self, rng: &mut dyn RngCore, ctx: &StepContext<'_>) -> Result<(usize, usize, f64)>;

    /// `Σ_outcomes log p(outcome | context)` over the kernels active at this step.
    fn barrier_value(&self, tr: &StepTransition<'_>) -> Result<f64>;

    /// Adds `weight · ∇_θ barrier_value(tr)` into `out`.
    fn add_barrier_grad(&self, tr: &StepTransition<'_>, weight: f64, out: &mut [f64]) -> Result<()>;

    /// Adds `weight · Σ_i ∇_θ barrier_value(steps[i])`.
    fn add_barrier_grads(&self, steps: &[StepTransition<'_>], weight: f64, out: &mut [f64]) -> Result<()> {
        steps.iter().try_for_each(|tr| self.add_barrier_grad(tr, weight, out))
    }

    fn hessian_log_prob(&self, _tr: &StepTransition<'_>) -> Result<ActiveHessian> {
        Err(Error::Unsupported("Hessian is only available for tabular parametrizations"))
    }

    /// `(G, M)` when the parametrization admits uniform bounds.
    fn score_bounds(&self) -> Option<ScoreBounds>;
}

/// Parametrizations with separate `ν` and `φ` kernels.
pub trait FactorizedAsm: AsmPolicy {
    fn nu_dist(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>>;
    fn phi_dist(&self, s: usize, t: usize) -> Result<Vec<f64>>;
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn sample_categorical(rng: &mut dyn RngCore, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub(crate) fn check_index(what: &'static str, index: usize, bound: usize) -> Result<()> {
    if index < bound {
        Ok(())
    } else {
        Err(Error::bounds(what, index, bound))
    }
}

pub(crate) fn symbol_of(obs: &Observation, n_obs: usize) -> Result<usize> {
    match obs {
        Observation::Symbol(o) => {
            check_index("observation", *o, n_obs)?;
            Ok(*o)
        }
        Observation::Vector(_) => Err(Error::Shape("tabular policy received a real-valued observation".into())),
    }
}

/// Writes `−(diag(p) − p pᵀ)` into the `n × n` block of `m` starting at `(start, start)`.
pub(crate) fn write_softmax_hessian(p: &[f64], m: &mut [f64], stride: usize, start: usize) {
    for (i, &pi) in p.iter().enumerate() {
        for (j, &pj) in p.iter().enumerate() {
            let diag = if i == j { pi } else { 0.0 };
            m[(start + i) * stride + start + j] = -(diag - pi * pj);
        }
    }
}

/// Any of the supported parametrizations.
#[derive(Clone, Debug)]
pub enum Policy {
    Tabular(TabularSoftmaxAsm),
    Joint(TabularJointSoftmax),
    Mlp(MlpAsm),
}

macro_rules! delegate {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            Policy::Tabular($p) => $e,
            Policy::Joint($p) => $e,
            Policy::Mlp($p) => $e,
        }
    };
}

impl Policy {
    /// Builds a zero-initialised policy for a descriptor.
    pub fn from_descriptor(desc: &PolicyDescriptor) -> Result<Self> {
        Ok(match *desc {
            PolicyDescriptor::Tabular {
                n_obs,
                n_actions,
                n_agent_states,
                time_blocks,
            } => Policy::Tabular(TabularSoftmaxAsm::zeros(
                crate::nmdp::Alphabet::new(n_obs, n_actions, n_agent_states)?,
                time_blocks,
            )),
            PolicyDescriptor::TabularJoint {
                n_obs,
                n_actions,
                n_agent_states,
                time_blocks,
            } => Policy::Joint(TabularJointSoftmax::zeros(
                crate::nmdp::Alphabet::new(n_obs, n_actions, n_agent_states)?,
                time_blocks,
            )),
            PolicyDescriptor::Mlp {
                n_actions,
                n_agent_states,
                obs_input,
                hidden,
            } => Policy::Mlp(MlpAsm::zeros(n_agent_states, n_actions, obs_input, hidden)?),
        })
    }

    pub fn as_dyn(&self) -> &dyn AsmPolicy {
        delegate!(self, p => p)
    }

    pub fn as_dyn_mut(&mut self) -> &mut dyn AsmPolicy {
        delegate!(self, p => p)
    }

    pub fn is_tabular(&self) -> bool {
        !matches!(self, Policy::Mlp(_))
    }
}

impl AsmPolicy for Policy {
    fn descriptor(&self) -> PolicyDescriptor {
        delegate!(self, p => p.descriptor())
    }
    fn n_agent_states(&self) -> usize {
        delegate!(self, p => p.n_agent_states())
    }
    fn n_actions(&self) -> usize {
        delegate!(self, p => p.n_actions())
    }
    fn params(&self) -> &[f64] {
        delegate!(self, p => p.params())
    }
    fn params_mut(&mut self) -> &mut [f64] {
        delegate!(self, p => p.params_mut())
    }
    fn blocks(&self) -> Vec<ParamBlock> {
        delegate!(self, p => p.blocks())
    }
    fn horizon_limit(&self) -> Option<usize> {
        delegate!(self, p => p.horizon_limit())
    }
    fn joint_dist(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        delegate!(self, p => p.joint_dist(ctx))
    }
    fn log_prob_step(&self, tr: &StepTransition<'_>) -> Result<f64> {
        delegate!(self, p => p.log_prob_step(tr))
    }
    fn add_score(&self, tr: &StepTransition<'_>, weight: f64, out: &mut [f64]) -> Result<()> {
        delegate!(self, p => p.add_score(tr, weight, out))
    }
    fn sample_step(&self, rng: &mut dyn RngCore, ctx: &StepContext<'_>) -> Result<(usize, usize, f64)> {
        delegate!(self, p => p.sample_step(rng, ctx))
    }
    fn barrier_value(&self, tr: &StepTransition<'_>) -> Result<f64> {
        delegate!(self, p => p.barrier_value(tr))
    }
    fn add_barrier_grad(&self, tr: &StepTransition<'_>, weight: f64, out: &mut [f64]) -> Result<()> {
        delegate!(self, p => p.add_barrier_grad(tr, weight, out))
    }
    fn add_scores(&self, steps: &[(StepTransition<'_>, f64)], out: &mut [f64]) -> Result<()> {
        delegate!(self, p => p.add_scores(steps, out))
    }
    fn add_barrier_grads(&self, steps: &[StepTransition<'_>], weight: f64, out: &mut [f64]) -> Result<()> {
        delegate!(self, p => p.add_barrier_grads(steps, weight, out))
    }
    fn hessian_log_prob(&self, tr: &StepTransition<'_>) -> Result<ActiveHessian> {
        delegate!(self, p => p.hessian_log_prob(tr))
    }
    fn score_bounds(&self) -> Option<ScoreBounds> {
        delegate!(self, p => p.score_bounds())
    }
}
