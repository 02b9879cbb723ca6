use super::{check_policy_horizon, over_first_obs, EnumOptions};
use crate::error::{Error, Result};
use crate::grad::{episode_estimate, transitions};
use crate::math::CompensatedVec;
use crate::nmdp::{discounted_return, EnumerableNmdp, Observation, ReturnSpec, Trajectory};
use crate::policy::{AsmPolicy, PolicyDescriptor, StepContext};

/// A trajectory with its probability under the policy and the NMDP.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedTrajectory {
    pub trajectory: Trajectory,
    pub probability: f64,
}

pub(crate) struct Walk<'a, N: ?Sized> {
    pub nmdp: &'a N,
    pub policy: &'a dyn AsmPolicy,
    pub horizon: usize,
    pub opts: &'a EnumOptions,
    pub mark_terminated: bool,
    pub obs: Vec<usize>,
    pub actions: Vec<usize>,
    pub traj: Trajectory,
}

impl<N: EnumerableNmdp + ?Sized> Walk<'_, N> {
    /// Expands every `(s, a)` after observing `o` with path probability `prob`.
    pub fn descend(&mut self, o: usize, prob: f64, leaf: &mut dyn FnMut(&Trajectory, f64) -> Result<()>) -> Result<()> {
        let t = self.traj.len() + 1;
        let obs = Observation::Symbol(o);
        let ctx = StepContext {
            s_prev: *self.traj.agent_states.last().expect("trajectory holds the dummy state"),
            a_prev: *self.traj.actions.last().expect("trajectory holds the dummy action"),
            obs: &obs,
            t,
        };
        let joint = self.policy.joint_dist(&ctx)?;
        let n_a = self.policy.n_actions();
        let n_obs = self.nmdp.n_obs();
        self.obs.push(o);
        let mut row = vec![0.0; n_obs];
        for (y, &pi) in joint.iter().enumerate() {
            let p = prob * pi;
            if !self.opts.keep(p) {
                continue;
            }
            let (s, a) = (y / n_a, y % n_a);
            self.actions.push(a);
            let r = self.nmdp.reward(&self.obs, &self.actions);
            self.traj.push(obs.clone(), s, a, r);
            let result = if t == self.horizon {
                self.traj.terminated = self.mark_terminated;
                let out = leaf(&self.traj, p);
                self.traj.terminated = false;
                out
            } else {
                self.nmdp.transition(&self.obs, &self.actions, &mut row);
                let children: Vec<(usize, f64)> = row.iter().map(|q| p * q).enumerate().collect();
                children
                    .into_iter()
                    .filter(|&(_, q)| self.opts.keep(q))
                    .try_for_each(|(o2, q)| self.descend(o2, q, leaf))
            };
            self.traj.pop();
            self.actions.pop();
            result?;
        }
        self.obs.pop();
        Ok(())
    }
}

/// Folds `visit(acc, τ, P(τ))` over every trajectory of length `horizon`.
///
/// Each first-observation subtree starts from `init()`; the subtree results
/// are merged in observation order.
pub fn fold_trajectories<N, A, I, V, M>(
    nmdp: &N,
    policy: &dyn AsmPolicy,
    horizon: usize,
    mark_terminated: bool,
    opts: &EnumOptions,
    init: I,
    visit: V,
    merge: M,
) -> Result<A>
where
    N: EnumerableNmdp + ?Sized,
    A: Send,
    I: Fn() -> A + Sync,
    V: Fn(&mut A, &Trajectory, f64) -> Result<()> + Sync,
    M: Fn(&mut A, A),
{
    let n_obs = nmdp.n_obs();
    if n_obs != policy_obs(policy).unwrap_or(n_obs) || nmdp.n_actions() != policy.n_actions() {
        return Err(Error::Shape("policy alphabet does not match the NMDP".into()));
    }
    opts.check_budget(n_obs * policy.n_agent_states() * policy.n_actions(), horizon)?;
    check_policy_horizon(policy, horizon)?;
    let mut acc = init();
    if horizon == 0 {
        visit(&mut acc, &Trajectory::start(), 1.0)?;
        return Ok(acc);
    }
    let mut mu = vec![0.0; n_obs];
    nmdp.initial_dist(&mut mu);
    let parts = over_first_obs(n_obs, opts.workers, |o| {
        let mut part = init();
        if opts.keep(mu[o]) {
            let mut walk = Walk {
                nmdp,
                policy,
                horizon,
                opts,
                mark_terminated,
                obs: Vec::with_capacity(horizon),
                actions: Vec::with_capacity(horizon),
                traj: Trajectory::start(),
            };
            walk.descend(o, mu[o], &mut |traj, p| visit(&mut part, traj, p))?;
        }
        Ok(part)
    })?;
    for part in parts {
        merge(&mut acc, part);
    }
    Ok(acc)
}

pub(crate) fn policy_obs(policy: &dyn AsmPolicy) -> Option<usize> {
    match policy.descriptor() {
        PolicyDescriptor::Tabular { n_obs, .. } | PolicyDescriptor::TabularJoint { n_obs, .. } => Some(n_obs),
        PolicyDescriptor::Mlp { .. } => None,
    }
}

/// Every trajectory of length `horizon` with its probability.
pub fn enumerate<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    policy: &dyn AsmPolicy,
    horizon: usize,
    opts: &EnumOptions,
) -> Result<Vec<WeightedTrajectory>> {
    fold_trajectories(
        nmdp,
        policy,
        horizon,
        true,
        opts,
        Vec::new,
        |acc, traj, p| {
            acc.push(WeightedTrajectory {
                trajectory: traj.clone(),
                probability: p,
            });
            Ok(())
        },
        |acc, part| acc.extend(part),
    )
}

fn tabular_only(policy: &dyn AsmPolicy) -> Result<()> {
    if policy_obs(policy).is_none() {
        return Err(Error::Unsupported(
            "exact gradients need a tabular policy; use fd_gradient for networks",
        ));
    }
    Ok(())
}

fn vec_fold<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    policy: &dyn AsmPolicy,
    spec: &ReturnSpec,
    opts: &EnumOptions,
    visit: impl Fn(&mut CompensatedVec, &Trajectory, f64) -> Result<()> + Sync,
) -> Result<Vec<f64>> {
    spec.validate()?;
    tabular_only(policy)?;
    let dim = policy.dim();
    let acc = fold_trajectories(
        nmdp,
        policy,
        spec.max_steps(),
        matches!(spec, ReturnSpec::Episodic { .. }),
        opts,
        || CompensatedVec::zeros(dim),
        visit,
        |acc, part| acc.merge(&part),
    )?;
    Ok(acc.values())
}

/// `Σ_τ P(τ) ĝ(τ)`: the exact expectation of the single-episode estimator.
pub fn exact_gradient<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    policy: &dyn AsmPolicy,
    spec: &ReturnSpec,
    opts: &EnumOptions,
) -> Result<Vec<f64>> {
    vec_fold(nmdp, policy, spec, opts, |acc, traj, p| {
        let est = episode_estimate(policy, traj, spec)?;
        acc.add_scaled(p, &est.vector);
        Ok(())
    })
}

/// `Σ_τ P(τ) R(τ) Σ_t ∇ log π_t`: the estimator with every score weighted by
/// the whole (discounted) return instead of the reward-to-go.
pub fn full_return_gradient<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    policy: &dyn AsmPolicy,
    spec: &ReturnSpec,
    opts: &EnumOptions,
) -> Result<Vec<f64>> {
    let dim = policy.dim();
    vec_fold(nmdp, policy, spec, opts, |acc, traj, p| {
        let ret = match *spec {
            ReturnSpec::Episodic { .. } => traj.total_reward(),
            ReturnSpec::Discounted { gamma, .. } => discounted_return(traj, 1, gamma)?,
        };
        let mut score = vec![0.0; dim];
        for tr in transitions(traj)? {
            policy.add_score(&tr, 1.0, &mut score)?;
        }
        acc.add_scaled(p * ret, &score);
        Ok(())
    })
}
