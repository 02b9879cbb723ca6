//! Score-function gradient estimators.
//!
//! The episodic estimator weights the step-`t` score by the reward-to-go
//! `R_{t:T}`; the discounted estimator by `Σ_{t'≥t} γ^{t'−1} r_{t'}` with the
//! discount anchored at the start of the episode. Episodes that terminate
//! early simply stop the sums, which is the same as padding with zero reward.

use crate::error::{Error, Result};
use crate::math::l2_norm;
use crate::nmdp::{check_gamma, discounted_return, ReturnSpec, Trajectory};
use crate::oracle::SmoothnessConstants;
use crate::policy::{AsmPolicy, StepTransition};

/// A gradient estimate with a few diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct GradEstimate {
    pub vector: Vec<f64>,
    pub n_episodes: usize,
    /// Mean (discounted, in discounted mode) return of the episodes used.
    pub mean_return: f64,
    /// Norms of the single-episode estimates, when they were formed.
    pub episode_norms: Vec<f64>,
}

impl GradEstimate {
    pub fn norm(&self) -> f64 {
        l2_norm(&self.vector)
    }
}

pub(crate) fn transitions(traj: &Trajectory) -> Result<Vec<StepTransition<'_>>> {
    (1..=traj.len()).map(|t| StepTransition::from_trajectory(traj, t)).collect()
}

/// `R_{t:T}` for every `t`, by one backward pass.
pub fn reward_to_go(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc += r;
        *o = acc;
    }
    out
}

/// `Σ_{t'≥t} γ^{t'−1} r_{t'}` for every `t`.
pub fn discounted_weights(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, (o, r)) in out.iter_mut().zip(rewards).enumerate().rev() {
        acc += gamma.powi(t as i32) * r;
        *o = acc;
    }
    out
}

fn check_length(traj: &Trajectory, limit: usize, what: &str) -> Result<()> {
    if traj.len() > limit {
        return Err(Error::Shape(format!("trajectory has {} steps, {what} is {limit}", traj.len())));
    }
    Ok(())
}

fn weighted_score(policy: &dyn AsmPolicy, traj: &Trajectory, weights: &[f64], out: &mut [f64]) -> Result<()> {
    let steps: Vec<_> = transitions(traj)?.into_iter().zip(weights.iter().copied()).collect();
    policy.add_scores(&steps, out)
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("gradient component {i}"))),
        None => Ok(()),
    }
}

/// Reward-to-go estimate `Σ_t R_{t:T} ∇ log π_t` for one episode.
///
/// The trajectory must have exactly `horizon` steps unless it terminated.
pub fn episodic_estimate(policy: &dyn AsmPolicy, traj: &Trajectory, horizon: usize) -> Result<GradEstimate> {
    check_length(traj, horizon, "the horizon")?;
    if traj.len() < horizon && !traj.terminated {
        return Err(Error::Shape(format!(
            "trajectory of {} steps is shorter than the horizon {horizon} but did not terminate",
            traj.len()
        )));
    }
    if let Some(limit) = policy.horizon_limit() {
        check_length(traj, limit, "the policy's time-block count")?;
    }
    let weights = reward_to_go(&traj.rewards);
    let mut vector = vec![0.0; policy.dim()];
    weighted_score(policy, traj, &weights, &mut vector)?;
    check_finite(&vector)?;
    let norm = l2_norm(&vector);
    Ok(GradEstimate {
        vector,
        n_episodes: 1,
        mean_return: weights.first().copied().unwrap_or(0.0),
        episode_norms: vec![norm],
    })
}

/// Discounted estimate `Σ_t (Σ_{t'≥t} γ^{t'−1} r_{t'}) ∇ log π_t` for one episode.
pub fn discounted_estimate(
    policy: &dyn AsmPolicy,
    traj: &Trajectory,
    gamma: f64,
    t_max: usize,
) -> Result<GradEstimate> {
    check_gamma(gamma)?;
    check_length(traj, t_max, "t_max")?;
    let weights = discounted_weights(&traj.rewards, gamma);
    let mut vector = vec![0.0; policy.dim()];
    weighted_score(policy, traj, &weights, &mut vector)?;
    check_finite(&vector)?;
    let norm = l2_norm(&vector);
    Ok(GradEstimate {
        vector,
        n_episodes: 1,
        mean_return: discounted_return(traj, 1, gamma)?,
        episode_norms: vec![norm],
    })
}

/// Single-episode estimate for either mode.
pub fn episode_estimate(policy: &dyn AsmPolicy, traj: &Trajectory, spec: &ReturnSpec) -> Result<GradEstimate> {
    match *spec {
        ReturnSpec::Episodic { horizon } => episodic_estimate(policy, traj, horizon),
        ReturnSpec::Discounted { gamma, t_max } => discounted_estimate(policy, traj, gamma, t_max),
    }
}

/// Mean of the single-episode estimates.
///
/// With `per_episode` every episode estimate is formed and the mean is taken
/// in episode order, which also records each estimate's norm. Otherwise all
/// weighted scores go to the policy in one call, which lets network policies
/// share forward and backward passes between visits of the same context.
pub fn batch_estimate(
    policy: &dyn AsmPolicy,
    trajs: &[Trajectory],
    spec: &ReturnSpec,
    per_episode: bool,
) -> Result<GradEstimate> {
    if trajs.is_empty() {
        return Err(Error::config("batch of episodes is empty"));
    }
    spec.validate()?;
    let n = trajs.len() as f64;
    let mut vector = vec![0.0; policy.dim()];
    let mut episode_norms = Vec::new();
    let mut total_return = 0.0;
    if per_episode {
        for traj in trajs {
            let est = episode_estimate(policy, traj, spec)?;
            for (v, e) in vector.iter_mut().zip(&est.vector) {
                *v += e;
            }
            total_return += est.mean_return;
            episode_norms.push(est.episode_norms[0]);
        }
        vector.iter_mut().for_each(|v| *v /= n);
    } else {
        let mut steps = Vec::new();
        for traj in trajs {
            check_length(traj, spec.max_steps(), "the episode limit")?;
            let weights = match *spec {
                ReturnSpec::Episodic { .. } => reward_to_go(&traj.rewards),
                ReturnSpec::Discounted { gamma, .. } => discounted_weights(&traj.rewards, gamma),
            };
            total_return += match *spec {
                ReturnSpec::Episodic { .. } => weights.first().copied().unwrap_or(0.0),
                ReturnSpec::Discounted { gamma, .. } => discounted_return(traj, 1, gamma)?,
            };
            steps.extend(transitions(traj)?.into_iter().zip(weights.into_iter().map(|w| w / n)));
        }
        policy.add_scores(&steps, &mut vector)?;
    }
    check_finite(&vector)?;
    Ok(GradEstimate {
        vector,
        n_episodes: trajs.len(),
        mean_return: total_return / n,
        episode_norms,
    })
}

fn total_steps(trajs: &[Trajectory]) -> usize {
    trajs.iter().map(Trajectory::len).sum()
}

/// `λ · (1/N) Σ_visits [Σ_s log ν(s | ctx) + Σ_a log φ(a | s_t)]` over the
/// `N` steps of the batch.
pub fn log_barrier(policy: &dyn AsmPolicy, trajs: &[Trajectory], lambda: f64) -> Result<f64> {
    let n = total_steps(trajs);
    if lambda == 0.0 || n == 0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for traj in trajs {
        for tr in transitions(traj)? {
            acc += policy.barrier_value(&tr)?;
        }
    }
    Ok(lambda * acc / n as f64)
}

/// Gradient of [`log_barrier`].
pub fn log_barrier_grad(policy: &dyn AsmPolicy, trajs: &[Trajectory], lambda: f64) -> Result<GradEstimate> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::config(format!("barrier coefficient must be >= 0, got {lambda}")));
    }
    let mut vector = vec![0.0; policy.dim()];
    let n = total_steps(trajs);
    if lambda > 0.0 && n > 0 {
        let steps: Vec<_> = trajs.iter().map(transitions).collect::<Result<Vec<_>>>()?.concat();
        policy.add_barrier_grads(&steps, lambda / n as f64, &mut vector)?;
    }
    check_finite(&vector)?;
    Ok(GradEstimate {
        vector,
        n_episodes: trajs.len(),
        mean_return: 0.0,
        episode_norms: Vec::new(),
    })
}

/// `C_H/2` or `C_γ/2`.
pub fn estimator_norm_bound(constants: &SmoothnessConstants) -> f64 {
    constants.estimator_norm_bound()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmdp::{Alphabet, Observation};
    use crate::policy::{TabularSoftmaxAsm, TimeBlocks};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_traj(rng: &mut ChaCha8Rng, len: usize) -> Trajectory {
        let mut t = Trajectory::start();
        for _ in 0..len {
            t.push(
                Observation::Symbol(rng.random_range(0..2)),
                rng.random_range(0..2),
                rng.random_range(0..2),
                rng.random_range(-1.0..1.0),
            );
        }
        t
    }

    fn policy(rng: &mut ChaCha8Rng) -> TabularSoftmaxAsm {
        TabularSoftmaxAsm::random(Alphabet::new(2, 2, 2).unwrap(), TimeBlocks::Shared, 1.0, rng)
    }

    #[test]
    fn weights() {
        assert_eq!(reward_to_go(&[1.0, 2.0, 3.0]), vec![6.0, 5.0, 3.0]);
        let w = discounted_weights(&[1.0, 1.0, 1.0], 0.5);
        assert_eq!(w, vec![1.75, 0.75, 0.25]);
    }

    #[test]
    fn zero_rewards_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = policy(&mut rng);
        let mut t = random_traj(&mut rng, 4);
        t.rewards.iter_mut().for_each(|r| *r = 0.0);
        assert!(episodic_estimate(&p, &t, 4).unwrap().vector.iter().all(|v| *v == 0.0));
        assert!(discounted_estimate(&p, &t, 0.3, 10).unwrap().vector.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_step_is_reward_times_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = policy(&mut rng);
        let t = random_traj(&mut rng, 1);
        let score = p.score_step(&StepTransition::from_trajectory(&t, 1).unwrap()).unwrap();
        for est in [episodic_estimate(&p, &t, 1).unwrap(), discounted_estimate(&p, &t, 0.9, 1).unwrap()] {
            for (e, s) in est.vector.iter().zip(&score) {
                assert!((e - t.rewards[0] * s).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn length_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = policy(&mut rng);
        let mut t = random_traj(&mut rng, 2);
        assert!(matches!(episodic_estimate(&p, &t, 3), Err(Error::Shape(_))));
        t.terminated = true;
        assert!(episodic_estimate(&p, &t, 3).is_ok());
        assert!(matches!(episodic_estimate(&p, &t, 1), Err(Error::Shape(_))));
        assert!(matches!(discounted_estimate(&p, &t, 1.0, 5), Err(Error::Config(_))));
        assert!(matches!(batch_estimate(&p, &[], &ReturnSpec::Episodic { horizon: 2 }, true), Err(Error::Config(_))));
    }

    #[test]
    fn batch_of_copies_equals_single_and_modes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = policy(&mut rng);
        let t = random_traj(&mut rng, 5);
        let spec = ReturnSpec::Discounted { gamma: 0.8, t_max: 5 };
        let single = episode_estimate(&p, &t, &spec).unwrap();
        let batch = batch_estimate(&p, &[t.clone(), t.clone(), t.clone()], &spec, true).unwrap();
        let flat = batch_estimate(&p, &[t.clone(), t.clone(), t], &spec, false).unwrap();
        for ((s, b), f) in single.vector.iter().zip(&batch.vector).zip(&flat.vector) {
            assert!((s - b).abs() < 1e-14 && (s - f).abs() < 1e-14);
        }
    }

    #[test]
    fn barrier_vanishes_at_uniform() {
        let p = TabularSoftmaxAsm::zeros(Alphabet::new(2, 2, 2).unwrap(), TimeBlocks::Shared);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_traj(&mut rng, 6);
        let g = log_barrier_grad(&p, std::slice::from_ref(&t), 0.01).unwrap();
        assert!(g.vector.iter().all(|v| v.abs() < 1e-15));
        assert!(log_barrier_grad(&policy(&mut rng), &[t], 0.0).unwrap().vector.iter().all(|v| *v == 0.0));
    }
}
