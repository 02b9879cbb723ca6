//! Exact computations on tiny enumerable NMDPs.
//!
//! Two traversals are used. Full enumeration walks every trajectory
//! `(o_t, s_t, a_t)_{t ≤ T}` with its probability and is the basis of the exact
//! estimator expectations. The objective itself is computed by a forward
//! recursion over environment histories `(o_t, a_t)_{t ≤ T}` that carries the
//! joint law of the current agent state, which is much cheaper and is batched
//! over many parameter vectors for finite differences.
//!
//! Subtrees rooted at the first observation can be processed by several
//! workers; each subtree is reduced on its own and the results are merged in
//! observation order, so the output does not depend on the worker count.

mod constants;
mod enumerate;
mod fd;
mod ideal;
mod objective;
mod values;

pub use constants::{constants, ConstantsMode, SmoothnessConstants};
pub use enumerate::{enumerate, exact_gradient, fold_trajectories, full_return_gradient, WeightedTrajectory};
pub use fd::{fd_gradient, fd_hessian, fd_hessian_norm};
pub use ideal::{ideal_asd_optimality_check, IdealAsdReport, IdealityStatus, IdealityWitness, NuKernel};
pub use objective::{exact_objective, objective_batch, ExactValue};
pub use values::{exact_q, exact_v, q_form_gradient, v_gradient};

use crate::error::{Error, Result};
use crate::nmdp::ReturnSpec;
use crate::policy::{AsmPolicy, Policy};

/// Default cap on the number of leaves a traversal may visit.
pub const DEFAULT_BUDGET: u128 = 10_000_000;

/// Traversal settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnumOptions {
    pub budget: u128,
    /// Skip branches whose probability falls below this value. Off by default.
    pub prune_below: Option<f64>,
    pub workers: usize,
}

impl Default for EnumOptions {
    fn default() -> Self {
        EnumOptions {
            budget: DEFAULT_BUDGET,
            prune_below: None,
            workers: 1,
        }
    }
}

impl EnumOptions {
    pub(crate) fn check_budget(&self, branching: usize, depth: usize) -> Result<()> {
        let required = (branching as u128).checked_pow(depth as u32).unwrap_or(u128::MAX);
        if required > self.budget {
            Err(Error::Budget {
                required,
                budget: self.budget,
            })
        } else {
            Ok(())
        }
    }

    pub(crate) fn keep(&self, prob: f64) -> bool {
        prob > 0.0 && self.prune_below.is_none_or(|eps| prob >= eps)
    }
}

/// Weight `γ_eff` between consecutive steps: 1 episodic, γ discounted.
pub(crate) fn step_discount(spec: &ReturnSpec) -> f64 {
    match *spec {
        ReturnSpec::Episodic { .. } => 1.0,
        ReturnSpec::Discounted { gamma, .. } => gamma,
    }
}

/// Rejects horizons longer than a per-step policy covers.
pub(crate) fn check_policy_horizon(policy: &dyn AsmPolicy, steps: usize) -> Result<()> {
    match policy.horizon_limit() {
        Some(limit) if steps > limit => Err(Error::Shape(format!(
            "policy has {limit} time blocks but {steps} steps are required"
        ))),
        _ => Ok(()),
    }
}

/// A policy of the same layout as `policy` holding `params`.
pub fn with_params(policy: &dyn AsmPolicy, params: &[f64]) -> Result<Policy> {
    let mut p = Policy::from_descriptor(&policy.descriptor())?;
    if params.len() != p.dim() {
        return Err(Error::Shape(format!("expected {} parameters, got {}", p.dim(), params.len())));
    }
    p.params_mut().copy_from_slice(params);
    Ok(p)
}

/// Runs `job(o)` for every first observation and returns the results in
/// observation order.
pub(crate) fn over_first_obs<A: Send>(
    n_obs: usize,
    workers: usize,
    job: impl Fn(usize) -> Result<A> + Sync,
) -> Result<Vec<A>> {
    if workers <= 1 || n_obs <= 1 {
        return (0..n_obs).map(job).collect();
    }
    let workers = workers.min(n_obs);
    let mut slots: Vec<Option<Result<A>>> = (0..n_obs).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let job = &job;
                scope.spawn(move || (w..n_obs).step_by(workers).map(|o| (o, job(o))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (o, r) in h.join().expect("enumeration worker panicked") {
                slots[o] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every observation was assigned")).collect()
}
