use rand::RngCore;

use super::{GenerativeEnv, ObsSpace, StepOutcome};
use crate::error::{Error, Result};
use crate::math::{mix_all, unit_from_hash};
use crate::nmdp::{EnumerableNmdp, Observation};
use crate::policy::sample_categorical;

const TAG_INIT: u64 = 1;
const TAG_TRANSITION: u64 = 2;
const TAG_REWARD: u64 = 3;

/// Parameters of a tiny enumerable NMDP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TinySpec {
    pub n_obs: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub seed: u64,
}

/// Seeded NMDP whose kernels are hashes of the full history. Sizes are capped
/// at four observations, four actions and horizon five, i.e. at most about
/// 10⁶ environment histories.
///
/// * `p_t(· | h) = 0.7·δ_target + 0.3·noise(h)` with
///   `target = (o_t + ((a_1 ⊕ a_t) & 1)) mod |O|`, so the next observation
///   depends on the first action as well as the current pair;
/// * `r_t(h) = 0.6·(±1 by the parity of a_t ⊕ a_1 ⊕ a_{t−1} ⊕ o_t) + 0.4·(2u − 1)`.
///
/// The kernels are defined for every history length; `horizon` is only the
/// episode length used by [`NmdpEnv`] and the enumeration budget check.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyNmdp {
    spec: TinySpec,
}

pub fn tiny_nmdp(spec: TinySpec) -> Result<TinyNmdp> {
    if !(1..=4).contains(&spec.n_obs) || !(1..=4).contains(&spec.n_actions) {
        return Err(Error::config("tiny NMDPs need 1 to 4 observations and actions"));
    }
    if !(1..=5).contains(&spec.horizon) {
        return Err(Error::config("tiny NMDPs need a horizon between 1 and 5"));
    }
    Ok(TinyNmdp { spec })
}

impl TinyNmdp {
    pub fn spec(&self) -> TinySpec {
        self.spec
    }

    fn history_hash(&self, tag: u64, obs: &[usize], actions: &[usize]) -> u64 {
        let mut words = Vec::with_capacity(2 + 2 * obs.len());
        words.push(tag);
        words.push(obs.len() as u64);
        for (o, a) in obs.iter().zip(actions) {
            words.push(*o as u64);
            words.push(*a as u64);
        }
        mix_all(self.spec.seed, &words)
    }

    fn noise_row(&self, h: u64, out: &mut [f64]) {
        for (i, v) in out.iter_mut().enumerate() {
            *v = 0.2 + unit_from_hash(mix_all(h, &[i as u64]));
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
    }
}

impl EnumerableNmdp for TinyNmdp {
    fn n_obs(&self) -> usize {
        self.spec.n_obs
    }

    fn n_actions(&self) -> usize {
        self.spec.n_actions
    }

    fn initial_dist(&self, out: &mut [f64]) {
        self.noise_row(mix_all(self.spec.seed, &[TAG_INIT]), out);
    }

    fn transition(&self, obs: &[usize], actions: &[usize], out: &mut [f64]) {
        self.noise_row(self.history_hash(TAG_TRANSITION, obs, actions), out);
        let t = obs.len();
        let target = (obs[t - 1] + ((actions[0] ^ actions[t - 1]) & 1)) % self.spec.n_obs;
        out.iter_mut().for_each(|v| *v *= 0.3);
        out[target] += 0.7;
    }

    fn reward(&self, obs: &[usize], actions: &[usize]) -> f64 {
        let t = obs.len();
        let key = if t >= 2 { actions[0] ^ actions[t - 2] } else { 0 };
        let parity = (actions[t - 1] ^ key ^ obs[t - 1]) & 1;
        let sign = if parity == 0 { 1.0 } else { -1.0 };
        let u = unit_from_hash(self.history_hash(TAG_REWARD, obs, actions));
        0.6 * sign + 0.4 * (2.0 * u - 1.0)
    }

    fn r_max(&self) -> f64 {
        1.0
    }
}

/// Two histories sharing `(o_t, a_t)` whose next-observation laws differ.
#[derive(Clone, Debug, PartialEq)]
pub struct NonMarkovWitness {
    pub first: (Vec<usize>, Vec<usize>),
    pub second: (Vec<usize>, Vec<usize>),
    pub total_variation: f64,
}

/// Scans all histories of length `< horizon` for the pair with equal last
/// `(o_t, a_t)` and the largest total-variation distance between their
/// next-observation distributions.
pub fn non_markov_witness<N: EnumerableNmdp + ?Sized>(nmdp: &N, horizon: usize) -> Option<NonMarkovWitness> {
    let (n_o, n_a) = (nmdp.n_obs(), nmdp.n_actions());
    let mut best: Option<NonMarkovWitness> = None;
    for t in 1..horizon {
        // every history of length t, grouped by its last (o, a)
        let mut groups: Vec<Vec<(Vec<usize>, Vec<usize>, Vec<f64>)>> = vec![Vec::new(); n_o * n_a];
        let count = (n_o * n_a).pow(t as u32);
        for code in 0..count {
            let (mut obs, mut actions, mut c) = (Vec::with_capacity(t), Vec::with_capacity(t), code);
            for _ in 0..t {
                obs.push(c % n_o);
                c /= n_o;
                actions.push(c % n_a);
                c /= n_a;
            }
            let mut row = vec![0.0; n_o];
            nmdp.transition(&obs, &actions, &mut row);
            let key = obs[t - 1] * n_a + actions[t - 1];
            groups[key].push((obs, actions, row));
        }
        for group in &groups {
            for (i, x) in group.iter().enumerate() {
                for y in &group[i + 1..] {
                    let tv = 0.5 * x.2.iter().zip(&y.2).map(|(p, q)| (p - q).abs()).sum::<f64>();
                    if best.as_ref().is_none_or(|b| tv > b.total_variation) {
                        best = Some(NonMarkovWitness {
                            first: (x.0.clone(), x.1.clone()),
                            second: (y.0.clone(), y.1.clone()),
                            total_variation: tv,
                        });
                    }
                }
            }
        }
    }
    best
}

/// Sampling front end for any enumerable NMDP; episodes last `horizon` steps.
#[derive(Clone, Debug)]
pub struct NmdpEnv<N> {
    nmdp: N,
    horizon: usize,
    name: String,
    obs: Vec<usize>,
    actions: Vec<usize>,
    active: bool,
}

impl<N: EnumerableNmdp> NmdpEnv<N> {
    pub fn new(nmdp: N, horizon: usize, name: String) -> Self {
        NmdpEnv {
            nmdp,
            horizon,
            name,
            obs: Vec::new(),
            actions: Vec::new(),
            active: false,
        }
    }

    pub fn nmdp(&self) -> &N {
        &self.nmdp
    }
}

impl<N: EnumerableNmdp + Send> GenerativeEnv for NmdpEnv<N> {
    fn name(&self) -> &str {
        &self.name
    }

    fn n_actions(&self) -> usize {
        self.nmdp.n_actions()
    }

    fn obs_space(&self) -> ObsSpace {
        ObsSpace::Discrete(self.nmdp.n_obs())
    }

    fn r_max(&self) -> f64 {
        self.nmdp.r_max()
    }

    fn max_steps(&self) -> Option<usize> {
        Some(self.horizon)
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation {
        let mut row = vec![0.0; self.nmdp.n_obs()];
        self.nmdp.initial_dist(&mut row);
        let o = sample_categorical(rng, &row);
        self.obs.clear();
        self.actions.clear();
        self.obs.push(o);
        self.active = true;
        Observation::Symbol(o)
    }

    fn step(&mut self, rng: &mut dyn RngCore, action: usize) -> Result<StepOutcome> {
        if !self.active {
            return Err(Error::Env("step called before reset or after episode end".into()));
        }
        if action >= self.nmdp.n_actions() {
            return Err(Error::bounds("action", action, self.nmdp.n_actions()));
        }
        self.actions.push(action);
        let reward = self.nmdp.reward(&self.obs, &self.actions);
        let mut row = vec![0.0; self.nmdp.n_obs()];
        self.nmdp.transition(&self.obs, &self.actions, &mut row);
        let o = sample_categorical(rng, &row);
        let terminated = self.actions.len() >= self.horizon;
        self.active = !terminated;
        if !terminated {
            self.obs.push(o);
        }
        Ok(StepOutcome {
            obs: Observation::Symbol(o),
            reward,
            terminated,
            truncated: false,
            success: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmdp::check_kernels;

    fn spec(seed: u64) -> TinySpec {
        TinySpec {
            n_obs: 2,
            n_actions: 2,
            horizon: 3,
            seed,
        }
    }

    #[test]
    fn kernels_are_valid() {
        for seed in 0..5 {
            check_kernels(&tiny_nmdp(spec(seed)).unwrap(), 5).unwrap();
        }
        let big = TinySpec {
            n_obs: 4,
            n_actions: 4,
            horizon: 5,
            seed: 0,
        };
        assert!(tiny_nmdp(big).is_ok());
        assert!(matches!(tiny_nmdp(TinySpec { n_obs: 5, ..big }), Err(Error::Config(_))));
        assert!(matches!(tiny_nmdp(TinySpec { horizon: 6, ..spec(0) }), Err(Error::Config(_))));
    }

    #[test]
    fn seed_zero_is_not_markov_in_the_last_pair() {
        let nmdp = tiny_nmdp(spec(0)).unwrap();
        let w = non_markov_witness(&nmdp, 3).unwrap();
        assert!(w.total_variation >= 0.2, "{w:?}");
        assert_eq!(w.first.0.last(), w.second.0.last());
        assert_eq!(w.first.1.last(), w.second.1.last());
    }

    #[test]
    fn deterministic_in_spec() {
        let (a, b) = (tiny_nmdp(spec(7)).unwrap(), tiny_nmdp(spec(7)).unwrap());
        let mut ra = [0.0; 2];
        let mut rb = [0.0; 2];
        a.transition(&[1, 0], &[1, 1], &mut ra);
        b.transition(&[1, 0], &[1, 1], &mut rb);
        assert_eq!(ra, rb);
        assert_eq!(a.reward(&[0], &[1]), b.reward(&[0], &[1]));
    }
}
