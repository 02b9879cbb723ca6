use super::enumerate::policy_obs;
use super::{check_policy_horizon, over_first_obs, with_params, EnumOptions};
use crate::error::{Error, Result};
use crate::math::CompensatedVec;
use crate::nmdp::{EnumerableNmdp, Observation, ReturnSpec, DUMMY_ACTION, DUMMY_STATE};
use crate::policy::{AsmPolicy, StepContext};

/// An exact (truncated) objective value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactValue {
    pub value: f64,
    /// `r_max γ^{T_max}/(1−γ)` in discounted mode, `0` in episodic mode.
    pub tail_bound: f64,
}

/// `π_t(s, a | s̃, ã, o)` for every context and time block.
pub(crate) struct KernelTable {
    n_s: usize,
    n_a: usize,
    n_obs: usize,
    per_step: bool,
    data: Vec<f64>,
}

impl KernelTable {
    pub fn build(policy: &dyn AsmPolicy, n_obs: usize, horizon: usize) -> Result<Self> {
        check_policy_horizon(policy, horizon)?;
        let (n_s, n_a) = (policy.n_agent_states(), policy.n_actions());
        let per_step = policy.horizon_limit().is_some();
        let blocks = if per_step { horizon } else { 1 };
        let outcomes = n_s * n_a;
        let mut data = Vec::with_capacity(blocks * n_s * n_a * n_obs * outcomes);
        for tb in 0..blocks {
            for s_prev in 0..n_s {
                for a_prev in 0..n_a {
                    for o in 0..n_obs {
                        let obs = Observation::Symbol(o);
                        let ctx = StepContext {
                            s_prev,
                            a_prev,
                            obs: &obs,
                            t: tb + 1,
                        };
                        data.extend(policy.joint_dist(&ctx)?);
                    }
                }
            }
        }
        Ok(KernelTable {
            n_s,
            n_a,
            n_obs,
            per_step,
            data,
        })
    }

    /// Row for context `(s̃, ã, o)` at 1-based step `t`.
    #[inline]
    pub fn row(&self, t: usize, s_prev: usize, a_prev: usize, o: usize) -> &[f64] {
        let tb = if self.per_step { t - 1 } else { 0 };
        let outcomes = self.n_s * self.n_a;
        let off = (((tb * self.n_s + s_prev) * self.n_a + a_prev) * self.n_obs + o) * outcomes;
        &self.data[off..off + outcomes]
    }
}

struct Forward<'a, N: ?Sized> {
    nmdp: &'a N,
    tables: &'a [KernelTable],
    spec: &'a ReturnSpec,
    horizon: usize,
    opts: &'a EnumOptions,
    n_s: usize,
    n_a: usize,
}

impl<N: EnumerableNmdp + ?Sized> Forward<'_, N> {
    /// Handles observation `o` arriving after `t` completed steps.
    ///
    /// `alpha[θ·S + s] = P(history, s_t = s)` under parameter vector `θ`.
    #[allow(clippy::too_many_arguments)]
    fn branch(
        &self,
        t: usize,
        alpha: &[f64],
        a_prev: usize,
        o: usize,
        p_o: f64,
        obs: &mut Vec<usize>,
        actions: &mut Vec<usize>,
        acc: &mut CompensatedVec,
    ) -> Result<()> {
        let (n_s, n_a) = (self.n_s, self.n_a);
        let n_th = self.tables.len();
        let step = t + 1;
        let weight = self.spec.reward_weight(step);
        obs.push(o);
        let mut row = vec![0.0; self.nmdp.n_obs()];
        for a in 0..n_a {
            let mut next = vec![0.0; n_th * n_s];
            let mut mass = vec![0.0; n_th];
            for (th, table) in self.tables.iter().enumerate() {
                let src = &alpha[th * n_s..(th + 1) * n_s];
                let dst = &mut next[th * n_s..(th + 1) * n_s];
                for (s_prev, &w) in src.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let k = table.row(step, s_prev, a_prev, o);
                    for (s, d) in dst.iter_mut().enumerate() {
                        *d += w * k[s * n_a + a];
                    }
                }
                let m: f64 = dst.iter().map(|d| d * p_o).sum();
                dst.iter_mut().for_each(|d| *d *= p_o);
                mass[th] = m;
            }
            if !mass.iter().any(|&m| self.opts.keep(m)) {
                continue;
            }
            actions.push(a);
            let r = self.nmdp.reward(obs, actions);
            if r != 0.0 {
                acc.add_scaled(weight * r, &mass);
            }
            if step < self.horizon {
                self.nmdp.transition(obs, actions, &mut row);
                for (o2, &q) in row.clone().iter().enumerate() {
                    if q > 0.0 {
                        self.branch(step, &next, a, o2, q, obs, actions, acc)?;
                    }
                }
            }
            actions.pop();
        }
        obs.pop();
        Ok(())
    }
}

fn forward<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    tables: &[KernelTable],
    n_s: usize,
    n_a: usize,
    spec: &ReturnSpec,
    opts: &EnumOptions,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let horizon = spec.max_steps();
    opts.check_budget(nmdp.n_obs() * n_a, horizon)?;
    let n_th = tables.len();
    let mut alpha0 = vec![0.0; n_th * n_s];
    for th in 0..n_th {
        alpha0[th * n_s + DUMMY_STATE] = 1.0;
    }
    let mut mu = vec![0.0; nmdp.n_obs()];
    nmdp.initial_dist(&mut mu);
    let fwd = Forward {
        nmdp,
        tables,
        spec,
        horizon,
        opts,
        n_s,
        n_a,
    };
    let parts = over_first_obs(nmdp.n_obs(), opts.workers, |o| {
        let mut acc = CompensatedVec::zeros(n_th);
        if mu[o] > 0.0 {
            let (mut obs, mut actions) = (Vec::with_capacity(horizon), Vec::with_capacity(horizon));
            fwd.branch(0, &alpha0, DUMMY_ACTION, o, mu[o], &mut obs, &mut actions, &mut acc)?;
        }
        Ok(acc)
    })?;
    let mut total = CompensatedVec::zeros(n_th);
    for part in &parts {
        total.merge(part);
    }
    Ok(total.values())
}

fn check_alphabet<N: EnumerableNmdp + ?Sized>(nmdp: &N, policy: &dyn AsmPolicy) -> Result<()> {
    let obs_ok = policy_obs(policy).is_none_or(|n| n == nmdp.n_obs());
    if !obs_ok || policy.n_actions() != nmdp.n_actions() {
        return Err(Error::Shape("policy alphabet does not match the NMDP".into()));
    }
    Ok(())
}

fn tail_bound<N: EnumerableNmdp + ?Sized>(nmdp: &N, spec: &ReturnSpec) -> f64 {
    match *spec {
        ReturnSpec::Episodic { .. } => 0.0,
        ReturnSpec::Discounted { gamma, t_max } => nmdp.r_max() * gamma.powi(t_max as i32) / (1.0 - gamma),
    }
}

/// `J(θ) = E[R_{1:H}]`, or the discounted return truncated at `T_max` together
/// with the bound on the neglected tail.
pub fn exact_objective<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    policy: &dyn AsmPolicy,
    spec: &ReturnSpec,
    opts: &EnumOptions,
) -> Result<ExactValue> {
    check_alphabet(nmdp, policy)?;
    let table = KernelTable::build(policy, nmdp.n_obs(), spec.max_steps())?;
    let value = forward(nmdp, &[table], policy.n_agent_states(), policy.n_actions(), spec, opts)?[0];
    Ok(ExactValue {
        value,
        tail_bound: tail_bound(nmdp, spec),
    })
}

/// Objective values for many parameter vectors sharing the layout of
/// `template`, in one traversal.
pub fn objective_batch<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    template: &dyn AsmPolicy,
    thetas: &[Vec<f64>],
    spec: &ReturnSpec,
    opts: &EnumOptions,
) -> Result<Vec<f64>> {
    check_alphabet(nmdp, template)?;
    let tables = thetas
        .iter()
        .map(|theta| KernelTable::build(&with_params(template, theta)?, nmdp.n_obs(), spec.max_steps()))
        .collect::<Result<Vec<_>>>()?;
    forward(nmdp, &tables, template.n_agent_states(), template.n_actions(), spec, opts)
}
