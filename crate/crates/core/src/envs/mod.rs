//! Benchmark environments and enumerable fixtures.

pub mod cartpole;
pub mod cheese_maze;
pub mod fixtures;
pub mod hallway;
pub mod healthcare;
pub mod machine_repair;
pub mod tiny;

use std::collections::BTreeMap;

use rand::RngCore;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::nmdp::Observation;

pub use cartpole::VelocityOnlyCartPole;
pub use cheese_maze::CheeseMaze;
pub use fixtures::LatentTracker;
pub use hallway::Hallway;
pub use healthcare::{HealthObservation, Healthcare};
pub use machine_repair::MachineRepair;
pub use tiny::{non_markov_witness, tiny_nmdp, NmdpEnv, NonMarkovWitness, TinyNmdp, TinySpec};

/// Observation space of a generative environment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObsSpace {
    Discrete(usize),
    /// Real vectors of `dim` components; `scale` is the fixed divisor used
    /// when feeding them to a network.
    Real { dim: usize, scale: f64 },
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    /// The episode ended on its own.
    pub terminated: bool,
    /// The environment's own step cap was hit.
    pub truncated: bool,
    /// A navigation goal was reached on this step.
    pub success: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Sampling interface. All randomness comes from the caller's generator.
pub trait GenerativeEnv: Send {
    fn name(&self) -> &str;
    fn n_actions(&self) -> usize;
    fn obs_space(&self) -> ObsSpace;
    /// Bound on `|r_t|`.
    fn r_max(&self) -> f64;
    /// Built-in episode cap, if any.
    fn max_steps(&self) -> Option<usize> {
        None
    }
    /// Whether success (reaching a goal) is meaningful for this task.
    fn has_goal(&self) -> bool {
        false
    }
    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation;
    fn step(&mut self, rng: &mut dyn RngCore, action: usize) -> Result<StepOutcome>;
}

/// Free-form environment parameters taken from the run configuration.
pub type EnvParams = BTreeMap<String, Value>;

pub(crate) fn param_usize(params: &EnvParams, key: &str, default: usize) -> Result<usize> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| Error::config(format!("env parameter `{key}` must be a non-negative integer"))),
    }
}

pub(crate) fn param_str<'a>(params: &'a EnvParams, key: &str, default: &'a str) -> Result<&'a str> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_str()
            .ok_or_else(|| Error::config(format!("env parameter `{key}` must be a string"))),
    }
}

fn reject_unknown(params: &EnvParams, allowed: &[&str], env: &str) -> Result<()> {
    match params.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(Error::config(format!("unknown parameter `{k}` for environment {env}"))),
        None => Ok(()),
    }
}

pub const ENV_NAMES: [&str; 6] = [
    "cheese_maze",
    "hallway",
    "healthcare",
    "machine_repair",
    "velocity_cartpole",
    "tiny:<id>",
];

/// Builds an environment by name.
///
/// The fixed-layout environments draw all randomness from the generator passed
/// to `reset`/`step`, so `seed` only matters for `tiny`, where `tiny:<id>`
/// uses `<id>` as the kernel seed and bare `tiny` falls back to `seed`.
pub fn make_env(name: &str, seed: u64, params: &EnvParams) -> Result<Box<dyn GenerativeEnv>> {
    let env: Box<dyn GenerativeEnv> = match name {
        "cheese_maze" => {
            reject_unknown(params, &["max_steps"], name)?;
            Box::new(CheeseMaze::new(param_usize(params, "max_steps", 200)?)?)
        }
        "hallway" => {
            reject_unknown(params, &["max_steps"], name)?;
            Box::new(Hallway::new(param_usize(params, "max_steps", 200)?)?)
        }
        "healthcare" => {
            reject_unknown(params, &["observation"], name)?;
            let obs = match param_str(params, "observation", "binned")? {
                "binned" => HealthObservation::Binned,
                "raw" => HealthObservation::Raw,
                other => return Err(Error::config(format!("healthcare observation must be binned or raw, got {other}"))),
            };
            Box::new(Healthcare::new(obs))
        }
        "machine_repair" => {
            reject_unknown(params, &[], name)?;
            Box::new(MachineRepair::new())
        }
        "velocity_cartpole" => {
            reject_unknown(params, &["max_steps"], name)?;
            Box::new(VelocityOnlyCartPole::new(param_usize(params, "max_steps", 200)?)?)
        }
        _ if name == "tiny" || name.starts_with("tiny:") => {
            reject_unknown(params, &["n_obs", "n_actions", "horizon"], name)?;
            let id = match name.strip_prefix("tiny:") {
                Some(id) => id
                    .parse::<u64>()
                    .map_err(|_| Error::config(format!("tiny environment id must be an integer, got `{id}`")))?,
                None => seed,
            };
            let spec = TinySpec {
                n_obs: param_usize(params, "n_obs", 2)?,
                n_actions: param_usize(params, "n_actions", 2)?,
                horizon: param_usize(params, "horizon", 3)?,
                seed: id,
            };
            let horizon = spec.horizon;
            Box::new(NmdpEnv::new(tiny_nmdp(spec)?, horizon, name.to_string()))
        }
        _ => {
            return Err(Error::config(format!(
                "unknown environment `{name}`; expected one of {}",
                ENV_NAMES.join(", ")
            )))
        }
    };
    Ok(env)
}

/// Shortest-path length from every start state to the goal on the fully
/// observed latent graph; `None` marks unreachable starts.
pub fn latent_optimal_steps(name: &str) -> Result<BTreeMap<String, Option<usize>>> {
    match name {
        "cheese_maze" => Ok(CheeseMaze::bfs_distances()
            .into_iter()
            .enumerate()
            .map(|(pos, d)| (pos.to_string(), d))
            .collect()),
        "hallway" => Ok(Hallway::bfs_distances()
            .into_iter()
            .map(|((x, y), d)| (format!("({x},{y})"), d))
            .collect()),
        _ => Err(Error::config(format!("no deterministic latent graph for `{name}`"))),
    }
}

/// Breadth-first distances to `goal` on a graph given by a neighbour function.
pub(crate) fn bfs(n: usize, goal: usize, neighbours: impl Fn(usize) -> Vec<usize>) -> Vec<Option<usize>> {
    // distances on the reversed graph; the maze graphs here are undirected
    let mut dist = vec![None; n];
    dist[goal] = Some(0);
    let mut queue = std::collections::VecDeque::from([goal]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].expect("queued nodes have distances");
        for v in neighbours(u) {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unknown_names_and_params_are_config_errors() {
        let p = EnvParams::new();
        assert!(matches!(make_env("pacman", 0, &p), Err(Error::Config(_))));
        assert!(matches!(make_env("tiny:x", 0, &p), Err(Error::Config(_))));
        let mut bad = EnvParams::new();
        bad.insert("speed".into(), Value::from(3));
        assert!(matches!(make_env("hallway", 0, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn every_env_replays_identically() {
        let names = ["cheese_maze", "hallway", "healthcare", "machine_repair", "velocity_cartpole", "tiny:0"];
        for name in names {
            let run = || {
                let mut env = make_env(name, 1952, &EnvParams::new()).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(11);
                let mut out = vec![format!("{:?}", env.reset(&mut rng))];
                for k in 0..60 {
                    let o = env.step(&mut rng, k % env.n_actions()).unwrap();
                    out.push(format!("{:?} {}", o.obs, o.reward.to_bits()));
                    if o.done() {
                        out.push(format!("{:?}", env.reset(&mut rng)));
                    }
                }
                out
            };
            assert_eq!(run(), run(), "{name}");
        }
    }

    #[test]
    fn latent_steps_examples() {
        let cm = latent_optimal_steps("cheese_maze").unwrap();
        assert_eq!(cm["2"], Some(2));
        assert_eq!(cm["10"], Some(0));
        assert!(latent_optimal_steps("healthcare").is_err());
    }
}
