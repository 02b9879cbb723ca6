//! Oracle check suites behind `asmpg verify`.

use std::f64::consts::SQRT_2;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::envs::{tiny_nmdp, LatentTracker, TinyNmdp, TinySpec};
use crate::error::{Error, Result};
use crate::math::l2_norm;
use crate::nmdp::{Alphabet, EnumerableNmdp, Observation, ReturnSpec};
use crate::oracle::{
    constants, exact_gradient, exact_objective, fd_gradient, fd_hessian_norm, full_return_gradient,
    ideal_asd_optimality_check, q_form_gradient, EnumOptions, IdealityStatus, DEFAULT_BUDGET,
};
use crate::policy::{AsmPolicy, StepContext, StepTransition, TabularJointSoftmax, TabularSoftmaxAsm, TimeBlocks};

/// Version of the JSON report layout.
pub const REPORT_VERSION: u32 = 1;

const FD_STEP: f64 = 1e-5;
const HESSIAN_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Theorem1,
    Theorem2,
    Smoothness,
    SoftmaxBounds,
    IdealAsd,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 6] = ["theorem1", "theorem2", "smoothness", "softmax_bounds", "ideal_asd", "all"];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Theorem1 => "theorem1",
            Suite::Theorem2 => "theorem2",
            Suite::Smoothness => "smoothness",
            Suite::SoftmaxBounds => "softmax_bounds",
            Suite::IdealAsd => "ideal_asd",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "theorem1" => Suite::Theorem1,
            "theorem2" => Suite::Theorem2,
            "smoothness" => Suite::Smoothness,
            "softmax_bounds" => Suite::SoftmaxBounds,
            "ideal_asd" => Suite::IdealAsd,
            "all" => Suite::All,
            other => {
                return Err(Error::config(format!(
                    "unknown suite `{other}`; expected one of {}",
                    Suite::NAMES.join(", ")
                )))
            }
        })
    }
}

/// One line of the report. `pass` means `computed ≤ bound_or_reference`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub computed: f64,
    pub bound_or_reference: f64,
    pub pass: bool,
}

impl CheckResult {
    fn at_most(name: impl Into<String>, computed: f64, bound: f64) -> Self {
        CheckResult {
            name: name.into(),
            computed,
            bound_or_reference: bound,
            pass: computed <= bound,
        }
    }

    fn at_least(name: impl Into<String>, computed: f64, reference: f64) -> Self {
        CheckResult {
            name: name.into(),
            computed,
            bound_or_reference: reference,
            pass: computed >= reference,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub version: u32,
    pub suite: String,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

/// A check that could not run.
#[derive(Debug, thiserror::Error)]
#[error("check `{check}` could not run: {source}")]
pub struct SuiteError {
    pub check: String,
    #[source]
    pub source: Error,
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub budget: u128,
    pub workers: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            budget: DEFAULT_BUDGET,
            workers: 1,
            seed: 0,
        }
    }
}

impl VerifyOptions {
    fn enum_opts(&self) -> EnumOptions {
        EnumOptions {
            budget: self.budget,
            prune_below: None,
            workers: self.workers,
        }
    }
}

fn tiny(n_obs: usize, n_actions: usize, horizon: usize, seed: u64) -> Result<TinyNmdp> {
    tiny_nmdp(TinySpec {
        n_obs,
        n_actions,
        horizon,
        seed,
    })
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2_norm(&d)
}

/// `‖a − fd‖ / max(‖fd‖, 10⁻²)`, so that `≤ 10⁻⁶` means
/// `‖a − fd‖ ≤ max(10⁻⁶‖fd‖, 10⁻⁸)`.
fn fd_relative(a: &[f64], fd: &[f64]) -> f64 {
    diff_norm(a, fd) / l2_norm(fd).max(1e-2)
}

type Checks = Vec<CheckResult>;
type Part = fn(&VerifyOptions) -> std::result::Result<Checks, SuiteError>;

fn wrap<T>(check: &str, r: Result<T>) -> std::result::Result<T, SuiteError> {
    r.map_err(|source| SuiteError {
        check: check.to_string(),
        source,
    })
}

fn gradient_agreement(
    prefix: &str,
    spec: &ReturnSpec,
    probes: usize,
    opts: &VerifyOptions,
) -> std::result::Result<Checks, SuiteError> {
    let eo = opts.enum_opts();
    let nmdp = wrap(prefix, tiny(2, 2, spec.max_steps().min(5), 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut fd_worst, mut q_worst, mut full_worst) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..probes {
        let alphabet = wrap(prefix, Alphabet::new(2, 2, 2))?;
        let policy = TabularSoftmaxAsm::random(alphabet, TimeBlocks::Shared, 2.0, &mut rng);
        let exact = wrap(&format!("{prefix}.exact_vs_fd"), exact_gradient(&nmdp, &policy, spec, &eo))?;
        let fd = wrap(&format!("{prefix}.exact_vs_fd"), fd_gradient(&nmdp, &policy, spec, FD_STEP, &eo))?;
        let q = wrap(&format!("{prefix}.q_form"), q_form_gradient(&nmdp, &policy, spec, &eo))?;
        let full = wrap(&format!("{prefix}.full_return"), full_return_gradient(&nmdp, &policy, spec, &eo))?;
        fd_worst = fd_worst.max(fd_relative(&exact, &fd));
        q_worst = q_worst.max(diff_norm(&exact, &q));
        full_worst = full_worst.max(diff_norm(&exact, &full));
    }
    Ok(vec![
        CheckResult::at_most(format!("{prefix}.exact_vs_fd"), fd_worst, 1e-6),
        CheckResult::at_most(format!("{prefix}.q_form"), q_worst, 1e-9),
        CheckResult::at_most(format!("{prefix}.full_return"), full_worst, 1e-9),
    ])
}

fn theorem1(opts: &VerifyOptions) -> std::result::Result<Checks, SuiteError> {
    let spec = wrap("theorem1", ReturnSpec::episodic(3))?;
    gradient_agreement("theorem1", &spec, 20, opts)
}

fn theorem2(opts: &VerifyOptions) -> std::result::Result<Checks, SuiteError> {
    let gamma = 0.5;
    let spec = wrap("theorem2", ReturnSpec::discounted(gamma, 6))?;
    let mut checks = gradient_agreement("theorem2", &spec, 5, opts)?;
    let eo = opts.enum_opts();
    let nmdp = wrap("theorem2", tiny(2, 2, 5, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7A11);
    let alphabet = wrap("theorem2", Alphabet::new(2, 2, 2))?;
    let policy = TabularSoftmaxAsm::random(alphabet, TimeBlocks::Shared, 2.0, &mut rng);
    let name = "theorem2.truncation_gap";
    let short = wrap(name, exact_objective(&nmdp, &policy, &spec, &eo))?;
    let long_spec = wrap(name, ReturnSpec::discounted(gamma, 10))?;
    let long = wrap(name, exact_objective(&nmdp, &policy, &long_spec, &eo))?;
    checks.push(CheckResult::at_most(name, (long.value - short.value).abs(), short.tail_bound));
    Ok(checks)
}

fn smoothness(opts: &VerifyOptions) -> std::result::Result<Checks, SuiteError> {
    let eo = opts.enum_opts();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5A00);
    let mut checks = Vec::new();
    for i in 0..10u64 {
        let name = format!("smoothness.instance_{i}");
        let horizon = 1 + (i as usize % 3);
        let per_step = i % 2 == 1;
        let nmdp = wrap(&name, tiny(2, 2, horizon, 100 + i))?;
        let alphabet = wrap(&name, Alphabet::new(2, 2, 2))?;
        let blocks = if per_step {
            TimeBlocks::PerStep { horizon }
        } else {
            TimeBlocks::Shared
        };
        let policy = TabularJointSoftmax::random(alphabet, blocks, 2.0, &mut rng);
        let spec = wrap(&name, ReturnSpec::episodic(horizon))?;
        let norm = wrap(&name, fd_hessian_norm(&nmdp, &policy, &spec, HESSIAN_STEP, &eo))?;
        let beta = wrap(&name, constants(nmdp.r_max(), SQRT_2, 1.0, &spec))?.beta;
        checks.push(CheckResult::at_most(name, norm, beta));
    }
    let name = "smoothness.discounted";
    let nmdp = wrap(name, tiny(2, 2, 3, 200))?;
    let alphabet = wrap(name, Alphabet::new(2, 2, 2))?;
    let policy = TabularJointSoftmax::random(alphabet, TimeBlocks::Shared, 2.0, &mut rng);
    let spec = wrap(name, ReturnSpec::discounted(0.5, 3))?;
    let norm = wrap(name, fd_hessian_norm(&nmdp, &policy, &spec, HESSIAN_STEP, &eo))?;
    let beta = wrap(name, constants(nmdp.r_max(), SQRT_2, 1.0, &spec))?.beta;
    checks.push(CheckResult::at_most(name, norm, beta));
    Ok(checks)
}

fn softmax_bounds(opts: &VerifyOptions) -> std::result::Result<Checks, SuiteError> {
    let name = "softmax_bounds";
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x50F7);
    let (mut score_max, mut hess_max) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (n_obs, n_a, n_s) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
        let alphabet = wrap(name, Alphabet::new(n_obs, n_a, n_s))?;
        let scale = rng.random_range(0.0..6.0);
        let policy = TabularJointSoftmax::random(alphabet, TimeBlocks::Shared, scale, &mut rng);
        let obs = Observation::Symbol(rng.random_range(0..n_obs));
        let tr = StepTransition {
            ctx: StepContext {
                s_prev: rng.random_range(0..n_s),
                a_prev: rng.random_range(0..n_a),
                obs: &obs,
                t: 1,
            },
            s: rng.random_range(0..n_s),
            a: rng.random_range(0..n_a),
        };
        score_max = score_max.max(l2_norm(&wrap(name, policy.score_step(&tr))?));
        hess_max = hess_max.max(wrap(name, policy.hessian_log_prob(&tr))?.spectral_norm());
    }
    Ok(vec![
        CheckResult::at_most("softmax_bounds.score_norm", score_max, SQRT_2 + 1e-9),
        CheckResult::at_most("softmax_bounds.hessian_norm", hess_max, 1.0 + 1e-9),
    ])
}

fn ideal_asd(_opts: &VerifyOptions) -> std::result::Result<Checks, SuiteError> {
    let ideal = wrap(
        "ideal_asd.ideal_gap",
        ideal_asd_optimality_check(&LatentTracker, &LatentTracker::ideal_nu, 2, 3),
    )?;
    let forgetful = wrap(
        "ideal_asd.forgetful_gap",
        ideal_asd_optimality_check(&LatentTracker, &LatentTracker::forgetful_nu, 2, 3),
    )?;
    let mut ideal_gap = CheckResult::at_most("ideal_asd.ideal_gap", ideal.gap.abs(), 1e-12);
    ideal_gap.pass &= ideal.ideality == IdealityStatus::Ideal;
    Ok(vec![
        ideal_gap,
        CheckResult::at_least("ideal_asd.forgetful_gap", forgetful.gap, 0.01),
    ])
}

/// Runs a suite and collects its checks.
pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> std::result::Result<VerifyReport, SuiteError> {
    let parts: &[Part] = match suite {
        Suite::Theorem1 => &[theorem1],
        Suite::Theorem2 => &[theorem2],
        Suite::Smoothness => &[smoothness],
        Suite::SoftmaxBounds => &[softmax_bounds],
        Suite::IdealAsd => &[ideal_asd],
        Suite::All => &[theorem1, theorem2, smoothness, softmax_bounds, ideal_asd],
    };
    let mut checks = Vec::new();
    for part in parts {
        checks.extend(part(opts)?);
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport {
        version: REPORT_VERSION,
        suite: suite.name().to_string(),
        checks,
        pass,
    })
}
