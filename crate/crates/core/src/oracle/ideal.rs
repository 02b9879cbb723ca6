use std::collections::BTreeMap;

use serde::Serialize;

use super::DEFAULT_BUDGET;
use crate::error::{Error, Result};
use crate::nmdp::{EnumerableNmdp, DUMMY_ACTION, DUMMY_STATE};

/// Agent-state kernel `ν_t(s | s̃, ã, o)`, called as `nu(s̃, ã, o, t)` and
/// returning the distribution over agent states.
pub type NuKernel<'a> = &'a (dyn Fn(usize, usize, usize, usize) -> Vec<f64> + Sync);

/// Largest number of deterministic action maps tried.
pub const MAX_ACTION_MAPS: u128 = 1 << 20;

const TOL: f64 = 1e-12;

/// Two reachable histories that share `(t, s_t, a_t)` but differ in reward or
/// next-observation law.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdealityWitness {
    pub t: usize,
    pub agent_state: usize,
    pub action: usize,
    /// `"reward"` or `"transition"`.
    pub quantity: &'static str,
    pub first_obs: Vec<usize>,
    pub first_actions: Vec<usize>,
    pub second_obs: Vec<usize>,
    pub second_actions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum IdealityStatus {
    Ideal,
    Violated(IdealityWitness),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdealAsdReport {
    /// Best `E[R_{1:H}]` over deterministic maps `φ: S × [H] → A` composed with `ν`.
    pub asm_value: f64,
    /// Best `E[R_{1:H}]` over history-dependent policies.
    pub hr_value: f64,
    /// `hr_value − asm_value`.
    pub gap: f64,
    pub ideality: IdealityStatus,
}

impl IdealAsdReport {
    pub fn is_ideal(&self) -> bool {
        self.ideality == IdealityStatus::Ideal
    }
}

struct Ctx<'a, N: ?Sized> {
    nmdp: &'a N,
    nu: NuKernel<'a>,
    n_s: usize,
    horizon: usize,
}

impl<N: EnumerableNmdp + ?Sized> Ctx<'_, N> {
    fn nu_row(&self, s_prev: usize, a_prev: usize, o: usize, t: usize) -> Result<Vec<f64>> {
        let row = (self.nu)(s_prev, a_prev, o, t);
        let sum: f64 = row.iter().sum();
        if row.len() != self.n_s || row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "agent-state kernel at (s̃={s_prev}, ã={a_prev}, o={o}, t={t}) is not a distribution over {} states",
                self.n_s
            )));
        }
        Ok(row)
    }

    fn next_row(&self, obs: &[usize], actions: &[usize]) -> Vec<f64> {
        let mut row = vec![0.0; self.nmdp.n_obs()];
        if obs.is_empty() {
            self.nmdp.initial_dist(&mut row);
        } else {
            self.nmdp.transition(obs, actions, &mut row);
        }
        row
    }
}

struct Seen {
    reward: f64,
    next: Vec<f64>,
    obs: Vec<usize>,
    actions: Vec<usize>,
}

/// Walks every reachable `(o, s)` history with every action sequence and
/// compares rewards and next-observation rows across histories that share
/// `(t, s_t, a_t)`.
fn check_ideality<N: EnumerableNmdp + ?Sized>(ctx: &Ctx<'_, N>) -> Result<IdealityStatus> {
    let mut seen: BTreeMap<(usize, usize, usize), Seen> = BTreeMap::new();
    let mut obs = Vec::new();
    let mut actions = Vec::new();
    let witness = walk_ideality(ctx, &mut seen, &mut obs, &mut actions, DUMMY_STATE, DUMMY_ACTION)?;
    Ok(witness.map_or(IdealityStatus::Ideal, IdealityStatus::Violated))
}

fn walk_ideality<N: EnumerableNmdp + ?Sized>(
    ctx: &Ctx<'_, N>,
    seen: &mut BTreeMap<(usize, usize, usize), Seen>,
    obs: &mut Vec<usize>,
    actions: &mut Vec<usize>,
    s_prev: usize,
    a_prev: usize,
) -> Result<Option<IdealityWitness>> {
    let t = obs.len() + 1;
    let row = ctx.next_row(obs, actions);
    for (o, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let nu = ctx.nu_row(s_prev, a_prev, o, t)?;
        obs.push(o);
        for (s, &q) in nu.iter().enumerate() {
            if q <= 0.0 {
                continue;
            }
            for a in 0..ctx.nmdp.n_actions() {
                actions.push(a);
                let reward = ctx.nmdp.reward(obs, actions);
                let next = if t < ctx.horizon { ctx.next_row(obs, actions) } else { Vec::new() };
                let found = match seen.get(&(t, s, a)) {
                    None => {
                        seen.insert(
                            (t, s, a),
                            Seen {
                                reward,
                                next,
                                obs: obs.clone(),
                                actions: actions.clone(),
                            },
                        );
                        None
                    }
                    Some(prev) => {
                        let quantity = if (prev.reward - reward).abs() > TOL {
                            Some("reward")
                        } else if prev.next.iter().zip(&next).any(|(x, y)| (x - y).abs() > TOL) {
                            Some("transition")
                        } else {
                            None
                        };
                        quantity.map(|quantity| IdealityWitness {
                            t,
                            agent_state: s,
                            action: a,
                            quantity,
                            first_obs: prev.obs.clone(),
                            first_actions: prev.actions.clone(),
                            second_obs: obs.clone(),
                            second_actions: actions.clone(),
                        })
                    }
                };
                let found = match found {
                    Some(w) => Some(w),
                    None if t < ctx.horizon => walk_ideality(ctx, seen, obs, actions, s, a)?,
                    None => None,
                };
                actions.pop();
                if found.is_some() {
                    obs.pop();
                    return Ok(found);
                }
            }
        }
        obs.pop();
    }
    Ok(None)
}

/// `E[R_{t:H}]` under `φ ∘ ν` from the current history.
fn asm_value<N: EnumerableNmdp + ?Sized>(
    ctx: &Ctx<'_, N>,
    phi: &[usize],
    obs: &mut Vec<usize>,
    actions: &mut Vec<usize>,
    s_prev: usize,
    a_prev: usize,
) -> Result<f64> {
    let t = obs.len() + 1;
    let row = ctx.next_row(obs, actions);
    let mut v = 0.0;
    for (o, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let nu = ctx.nu_row(s_prev, a_prev, o, t)?;
        obs.push(o);
        for (s, &q) in nu.iter().enumerate() {
            if q <= 0.0 {
                continue;
            }
            let a = phi[(t - 1) * ctx.n_s + s];
            actions.push(a);
            let mut g = ctx.nmdp.reward(obs, actions);
            if t < ctx.horizon {
                g += asm_value(ctx, phi, obs, actions, s, a)?;
            }
            actions.pop();
            v += p * q * g;
        }
        obs.pop();
    }
    Ok(v)
}

/// Optimal `E[R_{t:H}]` over history-dependent policies by backward induction.
fn hr_value<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    horizon: usize,
    obs: &mut Vec<usize>,
    actions: &mut Vec<usize>,
) -> f64 {
    let t = obs.len() + 1;
    let mut row = vec![0.0; nmdp.n_obs()];
    if obs.is_empty() {
        nmdp.initial_dist(&mut row);
    } else {
        nmdp.transition(obs, actions, &mut row);
    }
    let mut v = 0.0;
    for (o, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        obs.push(o);
        let best = (0..nmdp.n_actions())
            .map(|a| {
                actions.push(a);
                let mut g = nmdp.reward(obs, actions);
                if t < horizon {
                    g += hr_value(nmdp, horizon, obs, actions);
                }
                actions.pop();
                g
            })
            .fold(f64::NEG_INFINITY, f64::max);
        obs.pop();
        v += p * best;
    }
    v
}

/// Compares the best ASM policy built on `nu` with the best history-dependent
/// policy over `horizon` steps, and checks whether `nu` is ideal.
pub fn ideal_asd_optimality_check<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    nu: NuKernel<'_>,
    n_agent_states: usize,
    horizon: usize,
) -> Result<IdealAsdReport> {
    if horizon == 0 || n_agent_states == 0 {
        return Err(Error::config("horizon and agent-state count must be >= 1"));
    }
    let n_a = nmdp.n_actions();
    let slots = n_agent_states * horizon;
    let maps = (n_a as u128).checked_pow(slots as u32).unwrap_or(u128::MAX);
    if maps > MAX_ACTION_MAPS {
        return Err(Error::Budget {
            required: maps,
            budget: MAX_ACTION_MAPS,
        });
    }
    let per_map = ((nmdp.n_obs() * n_agent_states) as u128)
        .checked_pow(horizon as u32)
        .unwrap_or(u128::MAX);
    let required = maps.saturating_mul(per_map);
    if required > DEFAULT_BUDGET {
        return Err(Error::Budget {
            required,
            budget: DEFAULT_BUDGET,
        });
    }
    let ctx = Ctx {
        nmdp,
        nu,
        n_s: n_agent_states,
        horizon,
    };
    let ideality = check_ideality(&ctx)?;

    let mut phi = vec![0usize; slots];
    let mut asm_best = f64::NEG_INFINITY;
    let (mut obs, mut actions) = (Vec::new(), Vec::new());
    for _ in 0..maps {
        let v = asm_value(&ctx, &phi, &mut obs, &mut actions, DUMMY_STATE, DUMMY_ACTION)?;
        asm_best = asm_best.max(v);
        // Odometer increment over A^{S·H}.
        for digit in phi.iter_mut() {
            *digit += 1;
            if *digit < n_a {
                break;
            }
            *digit = 0;
        }
    }
    let hr = hr_value(nmdp, horizon, &mut obs, &mut actions);
    Ok(IdealAsdReport {
        asm_value: asm_best,
        hr_value: hr,
        gap: hr - asm_best,
        ideality,
    })
}
