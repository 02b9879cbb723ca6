use super::enumerate::policy_obs;
use super::{check_policy_horizon, over_first_obs, step_discount, EnumOptions};
use crate::error::{Error, Result};
use crate::math::CompensatedVec;
use crate::nmdp::{EnumerableNmdp, Observation, ReturnSpec, Trajectory};
use crate::policy::{AsmPolicy, StepContext, StepTransition};

struct Values<'a, N: ?Sized> {
    nmdp: &'a N,
    policy: &'a dyn AsmPolicy,
    horizon: usize,
    gamma: f64,
    obs: Vec<usize>,
    actions: Vec<usize>,
    traj: Trajectory,
}

impl<N: EnumerableNmdp + ?Sized> Values<'_, N> {
    /// `V_t` for the current prefix followed by observation `o` at step `t`.
    ///
    /// With `grad`, adds `weight · π_t · Q_t · ∇log π_t` for every `(s, a)`
    /// and recurses with the weight scaled by `π_t p_t γ`.
    fn v_node(&mut self, o: usize, weight: f64, grad: &mut Option<&mut CompensatedVec>) -> Result<f64> {
        let t = self.traj.len() + 1;
        let obs = Observation::Symbol(o);
        let s_prev = *self.traj.agent_states.last().expect("dummy state present");
        let a_prev = *self.traj.actions.last().expect("dummy action present");
        let ctx = StepContext {
            s_prev,
            a_prev,
            obs: &obs,
            t,
        };
        let joint = self.policy.joint_dist(&ctx)?;
        let n_a = self.policy.n_actions();
        let mut v = 0.0;
        for (y, &pi) in joint.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            let (s, a) = (y / n_a, y % n_a);
            let q = self.q_after(obs.clone(), s, a, weight * pi, grad)?;
            if let Some(acc) = grad.as_deref_mut() {
                let tr = StepTransition { ctx, s, a };
                acc.add_scaled(weight * pi * q, &self.policy.score_step(&tr)?);
            }
            v += pi * q;
        }
        Ok(v)
    }

    /// Pushes `(o, s, a)` and returns `Q_t` of the extended prefix.
    fn q_after(
        &mut self,
        obs: Observation,
        s: usize,
        a: usize,
        weight: f64,
        grad: &mut Option<&mut CompensatedVec>,
    ) -> Result<f64> {
        let o = obs.symbol().expect("symbolic observation");
        self.obs.push(o);
        self.actions.push(a);
        let r = self.nmdp.reward(&self.obs, &self.actions);
        self.traj.push(obs, s, a, r);
        let result = self.q_tail(r, weight, grad);
        self.traj.pop();
        self.actions.pop();
        self.obs.pop();
        result
    }

    /// `r_t + γ Σ_{o'} p_t(o' | ·) V_{t+1}` for the current full prefix.
    fn q_tail(&mut self, r: f64, weight: f64, grad: &mut Option<&mut CompensatedVec>) -> Result<f64> {
        if self.traj.len() >= self.horizon {
            return Ok(r);
        }
        let mut row = vec![0.0; self.nmdp.n_obs()];
        self.nmdp.transition(&self.obs, &self.actions, &mut row);
        let mut cont = 0.0;
        for (o2, &p) in row.iter().enumerate() {
            if p > 0.0 {
                cont += p * self.v_node(o2, weight * p * self.gamma, grad)?;
            }
        }
        Ok(r + self.gamma * cont)
    }
}

fn setup<'a, N: EnumerableNmdp + ?Sized>(
    nmdp: &'a N,
    policy: &'a dyn AsmPolicy,
    spec: &ReturnSpec,
) -> Result<Values<'a, N>> {
    spec.validate()?;
    let n_obs = nmdp.n_obs();
    if n_obs != policy_obs(policy).unwrap_or(n_obs) || nmdp.n_actions() != policy.n_actions() {
        return Err(Error::Shape("policy alphabet does not match the NMDP".into()));
    }
    check_policy_horizon(policy, spec.max_steps())?;
    Ok(Values {
        nmdp,
        policy,
        horizon: spec.max_steps(),
        gamma: step_discount(spec),
        obs: Vec::new(),
        actions: Vec::new(),
        traj: Trajectory::start(),
    })
}

/// Replays `prefix` (and the pending observation), failing when any step has
/// zero probability.
fn enter_prefix<N: EnumerableNmdp + ?Sized>(
    vals: &mut Values<'_, N>,
    prefix: &Trajectory,
    next_obs: Option<usize>,
) -> Result<()> {
    let n_obs = vals.nmdp.n_obs();
    let steps = prefix.len() + usize::from(next_obs.is_some());
    if steps == 0 {
        return Err(Error::Shape("prefix must contain at least one observation".into()));
    }
    if steps > vals.horizon {
        return Err(Error::Shape(format!(
            "prefix reaches step {steps} beyond the horizon {}",
            vals.horizon
        )));
    }
    if prefix.agent_states.len() != prefix.len() + 1 || prefix.actions.len() != prefix.len() + 1 {
        return Err(Error::Shape("prefix must start with the dummy (s_0, a_0)".into()));
    }
    let mut row = vec![0.0; n_obs];
    vals.nmdp.initial_dist(&mut row);
    let mut symbols: Vec<usize> = Vec::with_capacity(steps);
    for o in &prefix.obs {
        symbols.push(o.symbol().ok_or_else(|| Error::Shape("prefix observations must be symbols".into()))?);
    }
    symbols.extend(next_obs);
    for (i, &o) in symbols.iter().enumerate() {
        let t = i + 1;
        if o >= n_obs {
            return Err(Error::bounds("observation", o, n_obs));
        }
        if row[o] <= 0.0 {
            return Err(Error::UndefinedConditional(format!("observation {o} at step {t} has probability 0")));
        }
        if t > prefix.len() {
            break;
        }
        let tr = StepTransition::from_trajectory(prefix, t)?;
        let y = tr.s * vals.policy.n_actions() + tr.a;
        if vals.policy.joint_dist(&tr.ctx)?.get(y).copied().unwrap_or(0.0) <= 0.0 {
            return Err(Error::UndefinedConditional(format!(
                "agent state {} and action {} at step {t} have probability 0",
                tr.s, tr.a
            )));
        }
        vals.obs.push(o);
        vals.actions.push(tr.a);
        let r = vals.nmdp.reward(&vals.obs, &vals.actions);
        vals.traj.push(Observation::Symbol(o), tr.s, tr.a, r);
        if t < steps {
            vals.nmdp.transition(&vals.obs, &vals.actions, &mut row);
        }
    }
    Ok(())
}

/// `Q_t(o_{1:t}, a_{0:t}, s_t)`: the expected (discounted, from step `t`)
/// reward-to-go given a prefix of length `t ≥ 1`.
pub fn exact_q<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    policy: &dyn AsmPolicy,
    prefix: &Trajectory,
    spec: &ReturnSpec,
    opts: &EnumOptions,
) -> Result<f64> {
    let mut vals = setup(nmdp, policy, spec)?;
    enter_prefix(&mut vals, prefix, None)?;
    let remaining = vals.horizon - prefix.len();
    opts.check_budget(nmdp.n_obs() * policy.n_agent_states() * policy.n_actions(), remaining)?;
    let r = *vals.traj.rewards.last().expect("prefix is non-empty");
    vals.q_tail(r, 1.0, &mut None)
}

/// `V_t(o_{1:t}, a_{0:t−1}, s_{t−1})` where `prefix` holds the first `t − 1`
/// steps and `next_obs` is `o_t`.
pub fn exact_v<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    policy: &dyn AsmPolicy,
    prefix: &Trajectory,
    next_obs: usize,
    spec: &ReturnSpec,
    opts: &EnumOptions,
) -> Result<f64> {
    v_with_grad(nmdp, policy, prefix, next_obs, spec, opts, None)
}

/// `Σ_{t'≥t} E[γ^{t'−t} Q_{t'} ∇log π_{t'} | prefix, o_t]`, the gradient of
/// [`exact_v`] at the same arguments.
pub fn v_gradient<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    policy: &dyn AsmPolicy,
    prefix: &Trajectory,
    next_obs: usize,
    spec: &ReturnSpec,
    opts: &EnumOptions,
) -> Result<Vec<f64>> {
    let mut acc = CompensatedVec::zeros(policy.dim());
    v_with_grad(nmdp, policy, prefix, next_obs, spec, opts, Some(&mut acc))?;
    Ok(acc.values())
}

fn v_with_grad<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    policy: &dyn AsmPolicy,
    prefix: &Trajectory,
    next_obs: usize,
    spec: &ReturnSpec,
    opts: &EnumOptions,
    grad: Option<&mut CompensatedVec>,
) -> Result<f64> {
    let mut vals = setup(nmdp, policy, spec)?;
    enter_prefix(&mut vals, prefix, Some(next_obs))?;
    let remaining = vals.horizon - prefix.len();
    opts.check_budget(nmdp.n_obs() * policy.n_agent_states() * policy.n_actions(), remaining)?;
    let mut grad = grad;
    vals.v_node(next_obs, 1.0, &mut grad)
}

/// `Σ_τ P(τ) Σ_t w_t Q_t(τ) ∇log π_t(τ)` with `w_t = 1` (episodic) or
/// `γ^{t−1}` (discounted): the Q-form of the policy gradient.
pub fn q_form_gradient<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    policy: &dyn AsmPolicy,
    spec: &ReturnSpec,
    opts: &EnumOptions,
) -> Result<Vec<f64>> {
    setup(nmdp, policy, spec)?;
    let horizon = spec.max_steps();
    opts.check_budget(nmdp.n_obs() * policy.n_agent_states() * policy.n_actions(), horizon)?;
    let dim = policy.dim();
    let mut mu = vec![0.0; nmdp.n_obs()];
    nmdp.initial_dist(&mut mu);
    let parts = over_first_obs(nmdp.n_obs(), opts.workers, |o| {
        let mut acc = CompensatedVec::zeros(dim);
        if mu[o] > 0.0 {
            let mut vals = setup(nmdp, policy, spec)?;
            vals.v_node(o, mu[o], &mut Some(&mut acc))?;
        }
        Ok(acc)
    })?;
    let mut total = CompensatedVec::zeros(dim);
    for part in &parts {
        total.merge(part);
    }
    Ok(total.values())
}
