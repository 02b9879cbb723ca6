use rand::{Rng, RngCore};

use super::{GenerativeEnv, ObsSpace, StepOutcome};
use crate::error::{Error, Result};
use crate::nmdp::Observation;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const HALF_LENGTH: f64 = 0.5;
const FORCE: f64 = 10.0;
const TAU: f64 = 0.02;
const X_LIMIT: f64 = 2.4;
const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
/// Velocities are divided by this before entering a network.
pub const OBS_SCALE: f64 = 5.0;

/// Cart-pole where only the cart and pole velocities are observed.
#[derive(Clone, Debug)]
pub struct VelocityOnlyCartPole {
    /// `(x, x_dot, theta, theta_dot)`.
    state: [f64; 4],
    steps: usize,
    max_steps: usize,
    active: bool,
}

impl VelocityOnlyCartPole {
    pub fn new(max_steps: usize) -> Result<Self> {
        if max_steps == 0 {
            return Err(Error::config("velocity_cartpole max_steps must be >= 1"));
        }
        Ok(VelocityOnlyCartPole {
            state: [0.0; 4],
            steps: 0,
            max_steps,
            active: false,
        })
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    #[cfg(feature = "test-hooks")]
    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
    }

    fn observe(&self) -> Observation {
        Observation::Vector(vec![self.state[1], self.state[3]])
    }

    fn integrate(&mut self, action: usize) {
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action == 1 { FORCE } else { -FORCE };
        let (sin, cos) = theta.sin_cos();
        let total_mass = MASS_CART + MASS_POLE;
        let pole_ml = MASS_POLE * HALF_LENGTH;
        let temp = (force + pole_ml * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc =
            (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / total_mass));
        let x_acc = temp - pole_ml * theta_acc * cos / total_mass;
        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
    }
}

impl GenerativeEnv for VelocityOnlyCartPole {
    fn name(&self) -> &str {
        "velocity_cartpole"
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn obs_space(&self) -> ObsSpace {
        ObsSpace::Real {
            dim: 2,
            scale: OBS_SCALE,
        }
    }

    fn r_max(&self) -> f64 {
        1.0
    }

    fn max_steps(&self) -> Option<usize> {
        Some(self.max_steps)
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation {
        for v in &mut self.state {
            *v = rng.random_range(-0.05..0.05);
        }
        self.steps = 0;
        self.active = true;
        self.observe()
    }

    fn step(&mut self, _rng: &mut dyn RngCore, action: usize) -> Result<StepOutcome> {
        if !self.active {
            return Err(Error::Env("step called before reset or after episode end".into()));
        }
        if action >= 2 {
            return Err(Error::bounds("action", action, 2));
        }
        self.integrate(action);
        self.steps += 1;
        let [x, _, theta, _] = self.state;
        let terminated = x.abs() > X_LIMIT || theta.abs() > THETA_LIMIT;
        let truncated = !terminated && self.steps >= self.max_steps;
        self.active = !(terminated || truncated);
        Ok(StepOutcome {
            obs: self.observe(),
            reward: 1.0,
            terminated,
            truncated,
            success: false,
        })
    }
}
