use rand::RngCore;
use rand_distr::{Distribution, Normal};

use super::{GenerativeEnv, ObsSpace, StepOutcome};
use crate::error::{Error, Result};
use crate::nmdp::Observation;

/// Actions: 0 = none, 1 = mild, 2 = aggressive.
const EFFECT: [f64; 3] = [0.0, 0.25, 0.6];
const COST: [f64; 3] = [0.0, 0.05, 0.2];
const TOXICITY: [f64; 3] = [0.0, 0.05, 0.25];
const RESISTANCE: [f64; 3] = [0.0, 0.0, 0.1];

pub const RECOVERED: f64 = 2.0;
pub const FAILED: f64 = -1.0;
pub const TERMINAL_REWARD: f64 = 50.0;
pub const N_BINS: usize = 8;
const START_HEALTH: f64 = 0.5;
const NOISE_SD: f64 = 0.05;

/// How health is reported to the agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HealthObservation {
    /// Eight equal bins on `[-1, 2]`.
    Binned,
    Raw,
}

/// Treatment planning with hidden toxicity and drug resistance.
#[derive(Clone, Debug)]
pub struct Healthcare {
    observation: HealthObservation,
    health: f64,
    toxicity: f64,
    resistance: f64,
    active: bool,
    noise: Normal<f64>,
}

impl Healthcare {
    pub fn new(observation: HealthObservation) -> Self {
        Healthcare {
            observation,
            health: START_HEALTH,
            toxicity: 0.0,
            resistance: 0.0,
            active: false,
            noise: Normal::new(0.0, NOISE_SD).expect("positive standard deviation"),
        }
    }

    pub fn bin(h: f64) -> usize {
        let x = (h - FAILED) / (RECOVERED - FAILED) * N_BINS as f64;
        (x.floor().max(0.0) as usize).min(N_BINS - 1)
    }

    fn observe(&self) -> Observation {
        match self.observation {
            HealthObservation::Binned => Observation::Symbol(Self::bin(self.health)),
            HealthObservation::Raw => Observation::Vector(vec![self.health]),
        }
    }

    /// `(health, toxicity, resistance)`.
    pub fn latent(&self) -> (f64, f64, f64) {
        (self.health, self.toxicity, self.resistance)
    }

    #[cfg(feature = "test-hooks")]
    pub fn set_health(&mut self, h: f64) {
        self.health = h;
    }
}

impl GenerativeEnv for Healthcare {
    fn name(&self) -> &str {
        "healthcare"
    }

    fn n_actions(&self) -> usize {
        3
    }

    fn obs_space(&self) -> ObsSpace {
        match self.observation {
            HealthObservation::Binned => ObsSpace::Discrete(N_BINS),
            HealthObservation::Raw => ObsSpace::Real { dim: 1, scale: 1.0 },
        }
    }

    fn r_max(&self) -> f64 {
        TERMINAL_REWARD
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Observation {
        self.health = START_HEALTH;
        self.toxicity = 0.0;
        self.resistance = 0.0;
        self.active = true;
        self.observe()
    }

    fn step(&mut self, rng: &mut dyn RngCore, action: usize) -> Result<StepOutcome> {
        if !self.active {
            return Err(Error::Env("step called before reset or after episode end".into()));
        }
        if action >= 3 {
            return Err(Error::bounds("action", action, 3));
        }
        let effect = EFFECT[action] * (1.0 - self.resistance.min(0.9));
        self.health += effect - 0.3 * self.toxicity + self.noise.sample(rng);
        self.toxicity = 0.9 * self.toxicity + TOXICITY[action];
        self.resistance = 0.95 * self.resistance + RESISTANCE[action];
        let (reward, terminated, success) = if self.health >= RECOVERED {
            (TERMINAL_REWARD, true, true)
        } else if self.health <= FAILED {
            (-TERMINAL_REWARD, true, false)
        } else {
            (self.health - COST[action], false, false)
        };
        self.active = !terminated;
        Ok(StepOutcome {
            obs: self.observe(),
            reward,
            terminated,
            truncated: false,
            success,
        })
    }
}
