use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::SmoothnessConstants;

/// Stepsize rules for plain stochastic gradient ascent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `min{1/β, (1/C)·√(Δ₁/(βK))}`.
    Constant,
    /// `min{1/β, (2/C)·√(2Δ₁/(βK))}`, the larger constant step valid for the
    /// in-expectation rate.
    ConstantWide,
    /// `1/(β√k)`.
    SqrtDecay,
    /// `c/k^p` with `1/2 < p ≤ 1`, so `Σα_k = ∞` and `Σα_k² < ∞`.
    Custom { c: f64, p: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Custom { c, p } => {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::config(format!("custom stepsize scale c must be positive, got {c}")));
                }
                if !(p > 0.5 && p <= 1.0) {
                    return Err(Error::config(format!(
                        "custom stepsize c/k^p needs 1/2 < p <= 1 so that the steps sum to infinity \
                         while their squares stay summable; got p = {p}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// `α_k` for the 1-based iteration `k`.
///
/// `delta1` is the optimality-gap estimate and `k_budget` the planned number
/// of iterations; both only enter the constant schedules. `delta` is the
/// confidence level, checked but not used by any of the formulas.
pub fn stepsize(
    schedule: &Schedule,
    k: u64,
    constants: &SmoothnessConstants,
    delta1: f64,
    k_budget: u64,
    delta: f64,
) -> Result<f64> {
    schedule.validate()?;
    if k == 0 {
        return Err(Error::config("iterations are counted from 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!("confidence level delta must lie in (0, 1), got {delta}")));
    }
    let beta = constants.beta;
    let c = constants.c;
    let constant_inputs = || -> Result<(f64, f64)> {
        if !(delta1.is_finite() && delta1 > 0.0) {
            return Err(Error::config(format!("gap estimate delta1 must be positive, got {delta1}")));
        }
        if k_budget == 0 {
            return Err(Error::config("iteration budget K must be >= 1"));
        }
        Ok((delta1, k_budget as f64))
    };
    Ok(match *schedule {
        Schedule::Constant => {
            let (d, kb) = constant_inputs()?;
            (1.0 / beta).min((d / (beta * kb)).sqrt() / c)
        }
        Schedule::ConstantWide => {
            let (d, kb) = constant_inputs()?;
            (1.0 / beta).min(2.0 / c * (2.0 * d / (beta * kb)).sqrt())
        }
        Schedule::SqrtDecay => 1.0 / (beta * (k as f64).sqrt()),
        Schedule::Custom { c, p } => c / (k as f64).powf(p),
    })
}

/// Adam moments for gradient ascent.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::config(format!("Adam learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::config("Adam moment decays must lie in [0, 1)"));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::config("Adam epsilon must be positive"));
        }
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        })
    }

    /// `θ ← θ + lr·m̂/(√v̂ + ε)`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam state has dimension {}, got parameters {} and gradient {}",
                self.m.len(),
                theta.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient passed to Adam".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] += self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }
}

/// The update rule of a run.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd {
        schedule: Schedule,
        constants: SmoothnessConstants,
        delta1: f64,
        k_budget: u64,
        delta: f64,
    },
    Adam(Adam),
}

impl Optimizer {
    /// Applies the ascent step for iteration `k` and returns the stepsize used
    /// (the learning rate for Adam).
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], k: u64) -> Result<f64> {
        match self {
            Optimizer::Sgd {
                schedule,
                constants,
                delta1,
                k_budget,
                delta,
            } => {
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite("gradient passed to SGD".into()));
                }
                let alpha = stepsize(schedule, k, constants, *delta1, *k_budget, *delta)?;
                theta.iter_mut().zip(grad).for_each(|(t, g)| *t += alpha * g);
                Ok(alpha)
            }
            Optimizer::Adam(adam) => {
                adam.step(theta, grad)?;
                Ok(adam.lr)
            }
        }
    }
}
