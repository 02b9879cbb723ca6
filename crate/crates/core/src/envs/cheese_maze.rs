use rand::{Rng, RngCore};

use super::{bfs, GenerativeEnv, ObsSpace, StepOutcome};
use crate::error::{Error, Result};
use crate::nmdp::Observation;

/// Latent cells; the goal is cell 10.
pub const N_CELLS: usize = 11;
pub const GOAL: usize = 10;
pub const N_OBS: usize = 7;

/// Actions: 0 = N, 1 = S, 2 = E, 3 = W.
pub const NORTH: usize = 0;
pub const SOUTH: usize = 1;
pub const EAST: usize = 2;
pub const WEST: usize = 3;

// layout, y grows upwards:
//   0  1  2  3  4
//   5     6     7
//   8    10     9
const CELLS: [(i32, i32); N_CELLS] = [
    (0, 2),
    (1, 2),
    (2, 2),
    (3, 2),
    (4, 2),
    (0, 1),
    (2, 1),
    (4, 1),
    (0, 0),
    (4, 0),
    (2, 0),
];

const OBSERVATION: [usize; N_CELLS] = [0, 1, 2, 1, 3, 4, 4, 4, 5, 5, 6];

/// Partially observed maze: the agent sees only the local wall pattern, which
/// aliases several cells.
#[derive(Clone, Debug)]
pub struct CheeseMaze {
    pos: Option<usize>,
    steps: usize,
    max_steps: usize,
}

impl CheeseMaze {
    pub fn new(max_steps: usize) -> Result<Self> {
        if max_steps == 0 {
            return Err(Error::config("cheese_maze max_steps must be >= 1"));
        }
        Ok(CheeseMaze {
            pos: None,
            steps: 0,
            max_steps,
        })
    }

    pub fn observation_of(cell: usize) -> usize {
        OBSERVATION[cell]
    }

    /// Cell reached by moving from `cell` in direction `action`.
    pub fn next_cell(cell: usize, action: usize) -> usize {
        let (x, y) = CELLS[cell];
        let target = match action {
            NORTH => (x, y + 1),
            SOUTH => (x, y - 1),
            EAST => (x + 1, y),
            _ => (x - 1, y),
        };
        CELLS.iter().position(|&c| c == target).unwrap_or(cell)
    }

    pub fn bfs_distances() -> Vec<Option<usize>> {
        bfs(N_CELLS, GOAL, |u| (0..4).map(|a| Self::next_cell(u, a)).filter(|&v| v != u).collect())
    }

    pub fn position(&self) -> Option<usize> {
        self.pos
    }

    #[cfg(feature = "test-hooks")]
    pub fn set_position(&mut self, cell: usize) {
        self.pos = Some(cell);
    }
}

impl GenerativeEnv for CheeseMaze {
    fn name(&self) -> &str {
        "cheese_maze"
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn obs_space(&self) -> ObsSpace {
        ObsSpace::Discrete(N_OBS)
    }

    fn r_max(&self) -> f64 {
        1.0
    }

    fn max_steps(&self) -> Option<usize> {
        Some(self.max_steps)
    }

    fn has_goal(&self) -> bool {
        true
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation {
        let cell = rng.random_range(0..GOAL);
        self.pos = Some(cell);
        self.steps = 0;
        Observation::Symbol(OBSERVATION[cell])
    }

    fn step(&mut self, _rng: &mut dyn RngCore, action: usize) -> Result<StepOutcome> {
        let pos = self.pos.ok_or_else(|| Error::Env("step called before reset or after episode end".into()))?;
        if action >= 4 {
            return Err(Error::bounds("action", action, 4));
        }
        let next = Self::next_cell(pos, action);
        self.steps += 1;
        let success = next == GOAL;
        let truncated = !success && self.steps >= self.max_steps;
        self.pos = if success || truncated { None } else { Some(next) };
        Ok(StepOutcome {
            obs: Observation::Symbol(OBSERVATION[next]),
            reward: if success { 1.0 } else { 0.0 },
            terminated: success,
            truncated,
            success,
        })
    }
}
