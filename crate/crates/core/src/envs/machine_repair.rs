use rand::{Rng, RngCore};

use super::{GenerativeEnv, ObsSpace, StepOutcome};
use crate::error::{Error, Result};
use crate::nmdp::Observation;

pub const HEALTHY: usize = 0;
pub const DEGRADED: usize = 1;
pub const OPERATE: usize = 0;
pub const REPAIR: usize = 1;

/// Maintenance under hidden wear: the agent sees only healthy/degraded while
/// wear drives degradation and limits how well repairs work.
#[derive(Clone, Debug)]
pub struct MachineRepair {
    condition: usize,
    wear: f64,
    active: bool,
}

impl MachineRepair {
    pub fn new() -> Self {
        MachineRepair {
            condition: HEALTHY,
            wear: 0.0,
            active: false,
        }
    }

    pub fn wear(&self) -> f64 {
        self.wear
    }

    #[cfg(feature = "test-hooks")]
    pub fn set_wear(&mut self, wear: f64) {
        self.wear = wear;
    }
}

impl Default for MachineRepair {
    fn default() -> Self {
        Self::new()
    }
}

impl GenerativeEnv for MachineRepair {
    fn name(&self) -> &str {
        "machine_repair"
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn obs_space(&self) -> ObsSpace {
        ObsSpace::Discrete(2)
    }

    fn r_max(&self) -> f64 {
        1.0
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Observation {
        self.condition = HEALTHY;
        self.wear = 0.0;
        self.active = true;
        Observation::Symbol(HEALTHY)
    }

    fn step(&mut self, rng: &mut dyn RngCore, action: usize) -> Result<StepOutcome> {
        if !self.active {
            return Err(Error::Env("step called before reset".into()));
        }
        let w = self.wear;
        let u: f64 = rng.random();
        let reward = match action {
            OPERATE => {
                let reward = if self.condition == HEALTHY { 1.0 } else { -1.0 };
                self.condition = if self.condition == HEALTHY {
                    if u < (0.05 + 0.15 * w).min(0.9) {
                        DEGRADED
                    } else {
                        HEALTHY
                    }
                } else if u < (0.3 + 0.2 * w).min(0.95) {
                    DEGRADED
                } else {
                    HEALTHY
                };
                self.wear = w + 0.1;
                reward
            }
            REPAIR => {
                self.condition = if u < (0.9 - 0.1 * w).max(0.5) { HEALTHY } else { DEGRADED };
                self.wear = 0.5 * w;
                -1.0
            }
            _ => return Err(Error::bounds("action", action, 2)),
        };
        Ok(StepOutcome {
            obs: Observation::Symbol(self.condition),
            reward,
            terminated: false,
            truncated: false,
            success: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn repair_is_imperfect() {
        let mut env = MachineRepair::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        env.reset(&mut rng);
        for _ in 0..7 {
            env.step(&mut rng, OPERATE).unwrap();
        }
        let before = env.wear();
        assert!(before > 0.0);
        env.step(&mut rng, REPAIR).unwrap();
        assert!(env.wear() < before && env.wear() > 0.0);
    }

    #[test]
    fn reward_signs() {
        let mut env = MachineRepair::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        env.reset(&mut rng);
        let out = env.step(&mut rng, OPERATE).unwrap();
        assert_eq!(out.reward, 1.0);
        assert_eq!(env.step(&mut rng, REPAIR).unwrap().reward, -1.0);
        for _ in 0..500 {
            let cond = env.condition;
            let out = env.step(&mut rng, OPERATE).unwrap();
            assert_eq!(out.reward, if cond == HEALTHY { 1.0 } else { -1.0 });
        }
    }
}
