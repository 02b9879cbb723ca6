//! Finite-alphabet non-Markovian decision processes: alphabets, trajectories,
//! partial returns and the enumerable-environment contract.
//!
//! Time indices follow the usual 1-based convention: `rewards[t - 1]` holds
//! `r_t`, `obs[t - 1]` holds `o_t`, while `agent_states[t]` and `actions[t]`
//! hold `s_t` and `a_t` because slot 0 is reserved for the dummy pair
//! `(s_0, a_0)`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::compensated_sum;

/// Agent state used as `s_0` for every policy.
pub const DUMMY_STATE: usize = 0;
/// Action used as `a_0` for every policy.
pub const DUMMY_ACTION: usize = 0;

/// Sizes of the observation, action and agent-state alphabets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    pub n_obs: usize,
    pub n_actions: usize,
    pub n_agent_states: usize,
}

impl Alphabet {
    pub fn new(n_obs: usize, n_actions: usize, n_agent_states: usize) -> Result<Self> {
        if n_obs == 0 || n_actions == 0 || n_agent_states == 0 {
            return Err(Error::config(format!(
                "alphabet sizes must be positive, got obs={n_obs} actions={n_actions} states={n_agent_states}"
            )));
        }
        Ok(Alphabet {
            n_obs,
            n_actions,
            n_agent_states,
        })
    }
}

/// A single observation: a symbol from a finite alphabet or a real vector
/// (the continuous-observation environments).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observation {
    Symbol(usize),
    Vector(Vec<f64>),
}

impl Observation {
    pub fn symbol(&self) -> Option<usize> {
        match self {
            Observation::Symbol(o) => Some(*o),
            Observation::Vector(_) => None,
        }
    }
}

/// One recorded episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub obs: Vec<Observation>,
    pub agent_states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// `true` when the episode ended on its own, `false` when it was cut off.
    pub terminated: bool,
}

impl Trajectory {
    /// Empty trajectory holding only the dummy `(s_0, a_0)`.
    pub fn start() -> Self {
        Trajectory {
            obs: Vec::new(),
            agent_states: vec![DUMMY_STATE],
            actions: vec![DUMMY_ACTION],
            rewards: Vec::new(),
            terminated: false,
        }
    }

    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, obs: Observation, s: usize, a: usize, reward: f64) {
        self.obs.push(obs);
        self.agent_states.push(s);
        self.actions.push(a);
        self.rewards.push(reward);
    }

    pub fn pop(&mut self) {
        if !self.rewards.is_empty() {
            self.obs.pop();
            self.agent_states.pop();
            self.actions.pop();
            self.rewards.pop();
        }
    }

    /// Undiscounted return of the whole episode.
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// `R_{t1:t2}`, the sum of rewards from `t1` to `t2` inclusive (empty sum is zero).
pub fn partial_return(traj: &Trajectory, t1: usize, t2: usize) -> Result<f64> {
    let len = traj.len();
    if t1 == 0 {
        return Err(Error::bounds("t1", t1, len));
    }
    if t2 > len {
        return Err(Error::bounds("t2", t2, len));
    }
    if t1 > t2 {
        return Ok(0.0);
    }
    Ok(compensated_sum(traj.rewards[t1 - 1..t2].iter().copied()))
}

/// `R^γ_{t1:T}` over the recorded (possibly truncated) trajectory.
pub fn discounted_return(traj: &Trajectory, t1: usize, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let len = traj.len();
    if t1 == 0 || t1 > len + 1 {
        return Err(Error::bounds("t1", t1, len));
    }
    Ok(traj.rewards[t1 - 1..]
        .iter()
        .rev()
        .fold(0.0, |acc, &r| r + gamma * acc))
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("discount factor must lie in (0, 1), got {gamma}")))
    }
}

/// First violated trajectory invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    LengthMismatch(String),
    AlphabetBound(String),
    NonFinite(String),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::LengthMismatch(m) => write!(f, "length mismatch: {m}"),
            Violation::AlphabetBound(m) => write!(f, "alphabet bound: {m}"),
            Violation::NonFinite(m) => write!(f, "non-finite reward: {m}"),
        }
    }
}

/// Check the structural invariants of `traj` against `alphabet`.
///
/// Vector observations are accepted as-is; symbols must be below `n_obs`.
pub fn validate_trajectory(traj: &Trajectory, alphabet: &Alphabet) -> std::result::Result<(), Violation> {
    let t = traj.rewards.len();
    if traj.obs.len() != t {
        return Err(Violation::LengthMismatch(format!("{} observations for {t} rewards", traj.obs.len())));
    }
    if traj.agent_states.len() != t + 1 {
        return Err(Violation::LengthMismatch(format!(
            "{} agent states, expected {}",
            traj.agent_states.len(),
            t + 1
        )));
    }
    if traj.actions.len() != t + 1 {
        return Err(Violation::LengthMismatch(format!("{} actions, expected {}", traj.actions.len(), t + 1)));
    }
    if let Some((i, o)) = traj
        .obs
        .iter()
        .enumerate()
        .find_map(|(i, o)| o.symbol().filter(|&o| o >= alphabet.n_obs).map(|o| (i, o)))
    {
        return Err(Violation::AlphabetBound(format!("observation {o} at step {}", i + 1)));
    }
    if let Some((i, s)) = traj.agent_states.iter().enumerate().find(|(_, &s)| s >= alphabet.n_agent_states) {
        return Err(Violation::AlphabetBound(format!("agent state {s} at index {i}")));
    }
    if let Some((i, a)) = traj.actions.iter().enumerate().find(|(_, &a)| a >= alphabet.n_actions) {
        return Err(Violation::AlphabetBound(format!("action {a} at index {i}")));
    }
    if let Some(i) = traj.rewards.iter().position(|r| !r.is_finite()) {
        return Err(Violation::NonFinite(format!("step {}", i + 1)));
    }
    Ok(())
}

/// How returns are aggregated into the objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReturnSpec {
    Episodic { horizon: usize },
    Discounted { gamma: f64, t_max: usize },
}

impl ReturnSpec {
    pub fn episodic(horizon: usize) -> Result<Self> {
        let spec = ReturnSpec::Episodic { horizon };
        spec.validate()?;
        Ok(spec)
    }

    pub fn discounted(gamma: f64, t_max: usize) -> Result<Self> {
        let spec = ReturnSpec::Discounted { gamma, t_max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ReturnSpec::Episodic { horizon: 0 } => Err(Error::config("episodic horizon must be >= 1")),
            ReturnSpec::Episodic { .. } => Ok(()),
            ReturnSpec::Discounted { gamma, t_max } => {
                check_gamma(gamma)?;
                if t_max == 0 {
                    return Err(Error::config("truncation length t_max must be >= 1"));
                }
                Ok(())
            }
        }
    }

    /// Maximum number of steps recorded per episode.
    pub fn max_steps(&self) -> usize {
        match *self {
            ReturnSpec::Episodic { horizon } => horizon,
            ReturnSpec::Discounted { t_max, .. } => t_max,
        }
    }

    /// Weight applied to `r_t` in the objective (`1` or `γ^{t-1}`).
    pub fn reward_weight(&self, t: usize) -> f64 {
        match *self {
            ReturnSpec::Episodic { .. } => 1.0,
            ReturnSpec::Discounted { gamma, .. } => gamma.powi(t as i32 - 1),
        }
    }
}

/// An NMDP whose kernels can be queried on arbitrary histories, which makes
/// exhaustive enumeration possible.
///
/// Histories are passed as `(o_{1:t}, a_{1:t})` with `obs.len() == actions.len() == t`.
/// Implementations must be pure functions of their arguments.
pub trait EnumerableNmdp: Sync {
    fn n_obs(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Writes `μ` into `out` (length `n_obs`).
    fn initial_dist(&self, out: &mut [f64]);
    /// Writes `p_t(· | o_{1:t}, a_{1:t})` into `out` (length `n_obs`).
    fn transition(&self, obs: &[usize], actions: &[usize], out: &mut [f64]);
    /// `r_t(o_{1:t}, a_{1:t})`.
    fn reward(&self, obs: &[usize], actions: &[usize]) -> f64;
    fn r_max(&self) -> f64;
}

/// Exhaustively checks the kernels of `nmdp` on every history of length at
/// most `horizon`: rows are distributions within `1e-12` and rewards are
/// bounded by `r_max`.
pub fn check_kernels<N: EnumerableNmdp + ?Sized>(nmdp: &N, horizon: usize) -> Result<()> {
    let n_obs = nmdp.n_obs();
    let mut row = vec![0.0; n_obs];
    nmdp.initial_dist(&mut row);
    check_row(&row, "initial distribution")?;
    let mut obs = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    check_kernels_rec(nmdp, horizon, &mut obs, &mut actions, &mut row)
}

fn check_kernels_rec<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    horizon: usize,
    obs: &mut Vec<usize>,
    actions: &mut Vec<usize>,
    row: &mut [f64],
) -> Result<()> {
    if obs.len() == horizon {
        return Ok(());
    }
    for o in 0..nmdp.n_obs() {
        obs.push(o);
        for a in 0..nmdp.n_actions() {
            actions.push(a);
            let r = nmdp.reward(obs, actions);
            if !(r.abs() <= nmdp.r_max()) {
                return Err(Error::config(format!(
                    "reward {r} exceeds r_max {} at history {obs:?}/{actions:?}",
                    nmdp.r_max()
                )));
            }
            if obs.len() < horizon {
                nmdp.transition(obs, actions, row);
                check_row(row, "transition")?;
            }
            check_kernels_rec(nmdp, horizon, obs, actions, row)?;
            actions.pop();
        }
        obs.pop();
    }
    Ok(())
}

fn check_row(row: &[f64], what: &str) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
        return Err(Error::config(format!("{what} row is not a distribution: {row:?}")));
    }
    Ok(())
}

/// Writes trajectories as newline-delimited JSON.
pub fn write_jsonl<W: Write>(mut out: W, trajs: &[Trajectory]) -> Result<()> {
    for traj in trajs {
        serde_json::to_writer(&mut out, traj)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads newline-delimited JSON trajectories, skipping blank lines.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Trajectory>> {
    let mut trajs = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        trajs.push(serde_json::from_str(&line)?);
    }
    Ok(trajs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(rewards: &[f64]) -> Trajectory {
        let mut t = Trajectory::start();
        for &r in rewards {
            t.push(Observation::Symbol(0), 0, 0, r);
        }
        t
    }

    #[test]
    fn partial_return_examples() {
        let t = traj(&[1.0, 1.0, 1.0]);
        assert_eq!(partial_return(&t, 2, 1).unwrap(), 0.0);
        assert_eq!(partial_return(&t, 2, 3).unwrap(), 2.0);
        let t = traj(&[0.5, -0.1, 5.0]);
        assert!((partial_return(&t, 1, 3).unwrap() - 5.4).abs() < 1e-12);
    }

    #[test]
    fn partial_return_bounds() {
        let t = traj(&[1.0, 2.0]);
        assert!(matches!(partial_return(&t, 0, 1), Err(Error::Bounds { .. })));
        assert!(matches!(partial_return(&t, 1, 3), Err(Error::Bounds { .. })));
    }

    #[test]
    fn discounted_return_examples() {
        let t = traj(&[1.0, 1.0, 1.0]);
        assert_eq!(discounted_return(&t, 1, 0.5).unwrap(), 1.75);
        assert_eq!(discounted_return(&t, 3, 0.5).unwrap(), 1.0);
        assert_eq!(discounted_return(&traj(&[]), 1, 0.3).unwrap(), 0.0);
        assert!(discounted_return(&t, 1, 1.0).is_err());
        assert!(discounted_return(&t, 5, 0.5).is_err());
    }

    #[test]
    fn validate_examples() {
        let alphabet = Alphabet::new(2, 2, 2).unwrap();
        let mut t = traj(&[0.0, 1.0, 0.0]);
        assert_eq!(validate_trajectory(&t, &alphabet), Ok(()));

        let mut short = t.clone();
        short.agent_states.pop();
        assert!(matches!(validate_trajectory(&short, &alphabet), Err(Violation::LengthMismatch(_))));

        t.actions[2] = 2;
        assert!(matches!(validate_trajectory(&t, &alphabet), Err(Violation::AlphabetBound(_))));
    }

    #[test]
    fn return_spec_domain() {
        assert!(ReturnSpec::episodic(0).is_err());
        assert!(ReturnSpec::discounted(0.0, 5).is_err());
        assert!(ReturnSpec::discounted(0.9, 0).is_err());
        assert!(ReturnSpec::discounted(0.9, 200).is_ok());
    }

    #[test]
    fn jsonl_round_trip() {
        let mut t = traj(&[1.0, -0.25]);
        t.obs[1] = Observation::Vector(vec![0.5, -1.5]);
        t.terminated = true;
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[t.clone(), traj(&[])]).unwrap();
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, vec![t, traj(&[])]);
    }

    proptest::proptest! {
        #[test]
        fn partial_return_telescopes(rewards in proptest::collection::vec(-100.0f64..100.0, 1..200), a in 0usize..200, b in 0usize..200, c in 0usize..200) {
            let t = traj(&rewards);
            let n = rewards.len();
            let mut idx = [a % n + 1, b % n + 1, c % n + 1];
            idx.sort();
            let [t1, tm, t2] = idx;
            let whole = partial_return(&t, t1, t2).unwrap();
            let split = partial_return(&t, t1, tm - 1).unwrap() + partial_return(&t, tm, t2).unwrap();
            proptest::prop_assert!((whole - split).abs() <= 1e-12);
        }

        #[test]
        fn discounted_return_bellman(rewards in proptest::collection::vec(-10.0f64..10.0, 2..50), gamma in 0.01f64..0.99, t1 in 0usize..50) {
            let t = traj(&rewards);
            let t1 = t1 % (rewards.len() - 1) + 1;
            let lhs = discounted_return(&t, t1, gamma).unwrap();
            let rhs = rewards[t1 - 1] + gamma * discounted_return(&t, t1 + 1, gamma).unwrap();
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-10);
        }
    }
}
