use serde::Serialize;

use crate::error::{Error, Result};
use crate::nmdp::{check_gamma, ReturnSpec};

/// Horizon or discount the constants were computed for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstantsMode {
    Episodic { horizon: usize },
    Discounted { gamma: f64 },
}

/// Smoothness and estimator-norm constants.
///
/// Episodic: `β = (r_max H(H+1)/6)(3M + G²(2H+1))`, `C = r_max G H(H+1)`.
/// Discounted: `β = (r_max/(1−γ)²)(M + G²(1+γ)/(1−γ))`, `C = 2 r_max G/(1−γ)²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SmoothnessConstants {
    pub r_max: f64,
    pub g: f64,
    pub m: f64,
    pub mode: ConstantsMode,
    /// `β` or `β_γ`.
    pub beta: f64,
    /// `C_H` or `C_γ`.
    pub c: f64,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl SmoothnessConstants {
    pub fn episodic(r_max: f64, g: f64, m: f64, horizon: usize) -> Result<Self> {
        check_positive("r_max", r_max)?;
        check_positive("G", g)?;
        check_positive("M", m)?;
        if horizon == 0 {
            return Err(Error::config("horizon H must be >= 1"));
        }
        let h = horizon as f64;
        Ok(SmoothnessConstants {
            r_max,
            g,
            m,
            mode: ConstantsMode::Episodic { horizon },
            beta: r_max * h * (h + 1.0) / 6.0 * (3.0 * m + g * g * (2.0 * h + 1.0)),
            c: r_max * g * h * (h + 1.0),
        })
    }

    pub fn discounted(r_max: f64, g: f64, m: f64, gamma: f64) -> Result<Self> {
        check_positive("r_max", r_max)?;
        check_positive("G", g)?;
        check_positive("M", m)?;
        check_gamma(gamma)?;
        let q = 1.0 - gamma;
        Ok(SmoothnessConstants {
            r_max,
            g,
            m,
            mode: ConstantsMode::Discounted { gamma },
            beta: r_max / (q * q) * (m + g * g * (1.0 + gamma) / q),
            c: 2.0 * r_max * g / (q * q),
        })
    }

    /// Uniform bound on a single-episode estimator norm, `C/2`.
    pub fn estimator_norm_bound(&self) -> f64 {
        self.c / 2.0
    }
}

/// Constants for the mode described by `spec`.
pub fn constants(r_max: f64, g: f64, m: f64, spec: &ReturnSpec) -> Result<SmoothnessConstants> {
    match *spec {
        ReturnSpec::Episodic { horizon } => SmoothnessConstants::episodic(r_max, g, m, horizon),
        ReturnSpec::Discounted { gamma, .. } => SmoothnessConstants::discounted(r_max, g, m, gamma),
    }
}
