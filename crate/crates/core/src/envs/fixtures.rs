use crate::nmdp::EnumerableNmdp;

/// Observation emitted after the first step.
pub const BLANK: usize = 2;

/// A two-state latent chain seen once: `o_1 = x_1` is uniform on `{0, 1}`,
/// every later observation is blank. The latent moves as
/// `x_{t+1} = x_t ⊕ a_t` and the reward is `1{a_t = x_t}`.
///
/// Tracking `x_t` in the agent state makes rewards and next observations
/// depend on history only through `(s_t, a_t)`; forgetting it does not.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LatentTracker;

impl LatentTracker {
    /// `x_t` implied by `(o_1, a_{1:t−1})`.
    pub fn latent(obs: &[usize], actions: &[usize]) -> usize {
        let t = obs.len();
        actions[..t - 1].iter().fold(obs[0], |x, a| x ^ a)
    }

    /// Deterministic tracker: copies the first observation, then applies `s ⊕ a`.
    pub fn ideal_nu(s_prev: usize, a_prev: usize, o: usize, _t: usize) -> Vec<f64> {
        let s = if o < BLANK { o } else { s_prev ^ a_prev };
        let mut p = vec![0.0; 2];
        p[s] = 1.0;
        p
    }

    /// Constant kernel that keeps no information.
    pub fn forgetful_nu(_s_prev: usize, _a_prev: usize, _o: usize, _t: usize) -> Vec<f64> {
        vec![1.0, 0.0]
    }
}

impl EnumerableNmdp for LatentTracker {
    fn n_obs(&self) -> usize {
        3
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn initial_dist(&self, out: &mut [f64]) {
        out.copy_from_slice(&[0.5, 0.5, 0.0]);
    }

    fn transition(&self, _obs: &[usize], _actions: &[usize], out: &mut [f64]) {
        out.copy_from_slice(&[0.0, 0.0, 1.0]);
    }

    fn reward(&self, obs: &[usize], actions: &[usize]) -> f64 {
        let t = obs.len();
        if actions[t - 1] == Self::latent(obs, actions) {
            1.0
        } else {
            0.0
        }
    }

    fn r_max(&self) -> f64 {
        1.0
    }
}
