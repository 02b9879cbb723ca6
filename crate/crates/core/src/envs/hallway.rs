use rand::{Rng, RngCore};

use super::{bfs, GenerativeEnv, ObsSpace, StepOutcome};
use crate::error::{Error, Result};
use crate::nmdp::Observation;

pub const WIDTH: i32 = 7;
pub const HEIGHT: i32 = 4;
pub const GOAL: (i32, i32) = (3, 2);
pub const CORNERS: [(i32, i32); 4] = [(0, 0), (6, 0), (0, 3), (6, 3)];
pub const N_OBS: usize = 16;

/// Actions: 0 = N, 1 = E, 2 = S, 3 = W.
const MOVES: [(i32, i32); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];

const BLOCKED: [(i32, i32); 8] = [(1, 1), (2, 1), (1, 2), (2, 2), (4, 1), (5, 1), (4, 2), (5, 2)];

pub const GOAL_REWARD: f64 = 5.0;
pub const WALL_REWARD: f64 = -1.0;
pub const STEP_REWARD: f64 = -0.1;

fn free(cell: (i32, i32)) -> bool {
    (0..WIDTH).contains(&cell.0) && (0..HEIGHT).contains(&cell.1) && !BLOCKED.contains(&cell)
}

/// Grid navigation where the agent observes only which of its four sides are
/// walls.
#[derive(Clone, Debug)]
pub struct Hallway {
    pos: Option<(i32, i32)>,
    steps: usize,
    max_steps: usize,
}

impl Hallway {
    pub fn new(max_steps: usize) -> Result<Self> {
        if max_steps == 0 {
            return Err(Error::config("hallway max_steps must be >= 1"));
        }
        Ok(Hallway {
            pos: None,
            steps: 0,
            max_steps,
        })
    }

    /// Bits `b3..b0` flag a wall to the N, E, S, W.
    pub fn observation_of(cell: (i32, i32)) -> usize {
        MOVES
            .iter()
            .fold(0, |acc, &(dx, dy)| (acc << 1) | usize::from(!free((cell.0 + dx, cell.1 + dy))))
    }

    pub fn bfs_distances() -> Vec<((i32, i32), Option<usize>)> {
        let index = |(x, y): (i32, i32)| (y * WIDTH + x) as usize;
        let cell = |i: usize| (i as i32 % WIDTH, i as i32 / WIDTH);
        let dist = bfs((WIDTH * HEIGHT) as usize, index(GOAL), |u| {
            let (x, y) = cell(u);
            MOVES
                .iter()
                .map(|&(dx, dy)| (x + dx, y + dy))
                .filter(|&c| free(c))
                .map(index)
                .collect()
        });
        CORNERS.iter().map(|&c| (c, dist[index(c)])).collect()
    }

    pub fn position(&self) -> Option<(i32, i32)> {
        self.pos
    }

    #[cfg(feature = "test-hooks")]
    pub fn set_position(&mut self, cell: (i32, i32)) {
        self.pos = Some(cell);
    }
}

impl GenerativeEnv for Hallway {
    fn name(&self) -> &str {
        "hallway"
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn obs_space(&self) -> ObsSpace {
        ObsSpace::Discrete(N_OBS)
    }

    fn r_max(&self) -> f64 {
        GOAL_REWARD
    }

    fn max_steps(&self) -> Option<usize> {
        Some(self.max_steps)
    }

    fn has_goal(&self) -> bool {
        true
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation {
        let start = CORNERS[rng.random_range(0..CORNERS.len())];
        self.pos = Some(start);
        self.steps = 0;
        Observation::Symbol(Self::observation_of(start))
    }

    fn step(&mut self, _rng: &mut dyn RngCore, action: usize) -> Result<StepOutcome> {
        let pos = self.pos.ok_or_else(|| Error::Env("step called before reset or after episode end".into()))?;
        let &(dx, dy) = MOVES.get(action).ok_or(Error::bounds("action", action, 4))?;
        let target = (pos.0 + dx, pos.1 + dy);
        let (next, reward) = if !free(target) {
            (pos, WALL_REWARD)
        } else if target == GOAL {
            (target, GOAL_REWARD)
        } else {
            (target, STEP_REWARD)
        };
        self.steps += 1;
        let success = next == GOAL;
        let truncated = !success && self.steps >= self.max_steps;
        self.pos = if success || truncated { None } else { Some(next) };
        Ok(StepOutcome {
            obs: Observation::Symbol(Self::observation_of(next)),
            reward,
            terminated: success,
            truncated,
            success,
        })
    }
}
