use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{
    check_index, sample_categorical, AsmPolicy, FactorizedAsm, Head, ParamBlock, PolicyDescriptor, ScoreBounds,
    StepContext, StepTransition,
};
use crate::error::{Error, Result};
use crate::math::{dot, log_softmax, softmax};
use crate::nmdp::Observation;

/// How observations enter the state-update network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObsInput {
    /// Finite alphabet, one-hot encoded.
    OneHot { n_obs: usize },
    /// Real vector divided component-wise by `scale`.
    Real { dim: usize, scale: f64 },
}

impl ObsInput {
    pub fn width(&self) -> usize {
        match *self {
            ObsInput::OneHot { n_obs } => n_obs,
            ObsInput::Real { dim, .. } => dim,
        }
    }
}

/// Fully connected tanh network whose weights live in a slice of a larger
/// parameter vector. Layer `l` stores its weight matrix row-major
/// (`out × in`) followed by its bias.
#[derive(Clone, Debug, PartialEq)]
struct Dense {
    sizes: Vec<usize>,
    offset: usize,
}

impl Dense {
    fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = self.offset;
        self.sizes.windows(2).map(move |w| {
            let here = off;
            off += w[1] * (w[0] + 1);
            (here, w[0], w[1])
        })
    }

    /// Returns every layer's activation; the first is the input and the last the logits.
    fn forward(&self, params: &[f64], input: Vec<f64>) -> Vec<Vec<f64>> {
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(input);
        for (l, (off, n_in, n_out)) in self.layers().enumerate() {
            let x = &acts[l];
            let w = &params[off..off + n_out * n_in];
            let b = &params[off + n_out * n_in..off + n_out * (n_in + 1)];
            let hidden = l + 1 < n_layers;
            let y: Vec<f64> = w
                .chunks_exact(n_in)
                .zip(b)
                .map(|(row, bi)| {
                    let z = bi + dot(row, x);
                    if hidden {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(y);
        }
        acts
    }

    /// Accumulates `∂⟨dlogits, logits⟩/∂params` into `out`.
    fn backward(&self, params: &[f64], acts: &[Vec<f64>], dlogits: Vec<f64>, out: &mut [f64]) {
        let layers: Vec<_> = self.layers().collect();
        let mut delta = dlogits;
        for (l, &(off, n_in, n_out)) in layers.iter().enumerate().rev() {
            let x = &acts[l];
            let w_end = off + n_out * n_in;
            for (i, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                out[w_end + i] += d;
                let row = &mut out[off + i * n_in..off + (i + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if l > 0 {
                let w = &params[off..w_end];
                let mut prev = vec![0.0; n_in];
                for (i, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wij) in prev.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]) {
                        *p += wij * d;
                    }
                }
                for (p, h) in prev.iter_mut().zip(x) {
                    *p *= 1.0 - h * h;
                }
                delta = prev;
            }
        }
    }

    fn init_xavier(&self, params: &mut [f64], rng: &mut dyn RngCore) {
        for (off, n_in, n_out) in self.layers() {
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            for w in &mut params[off..off + n_in * n_out] {
                *w = rng.random_range(-limit..=limit);
            }
            for b in &mut params[off + n_in * n_out..off + n_out * (n_in + 1)] {
                *b = 0.0;
            }
        }
    }
}

/// Neural ASM policy.
///
/// The state-update network maps `onehot(s̃) ⊕ onehot(ã) ⊕ enc(o)` through
/// tanh layers of widths `(2h, 2h, h)` to `|S|` logits; the control network
/// maps `onehot(s)` through two tanh layers of width `h` to `|A|` logits.
/// Parameters are shared across time.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpAsm {
    n_agent_states: usize,
    n_actions: usize,
    obs_input: ObsInput,
    hidden: usize,
    state_net: Dense,
    policy_net: Dense,
    params: Vec<f64>,
}

impl MlpAsm {
    pub fn zeros(n_agent_states: usize, n_actions: usize, obs_input: ObsInput, hidden: usize) -> Result<Self> {
        if n_agent_states == 0 || n_actions == 0 || hidden == 0 || obs_input.width() == 0 {
            return Err(Error::config("network sizes must be positive"));
        }
        if let ObsInput::Real { scale, .. } = obs_input {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::config(format!("observation scale must be positive, got {scale}")));
            }
        }
        let in_width = n_agent_states + n_actions + obs_input.width();
        let state_net = Dense {
            sizes: vec![in_width, 2 * hidden, 2 * hidden, hidden, n_agent_states],
            offset: 0,
        };
        let policy_net = Dense {
            sizes: vec![n_agent_states, hidden, hidden, n_actions],
            offset: state_net.n_params(),
        };
        let dim = state_net.n_params() + policy_net.n_params();
        Ok(MlpAsm {
            n_agent_states,
            n_actions,
            obs_input,
            hidden,
            state_net,
            policy_net,
            params: vec![0.0; dim],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn xavier(
        n_agent_states: usize,
        n_actions: usize,
        obs_input: ObsInput,
        hidden: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let mut p = Self::zeros(n_agent_states, n_actions, obs_input, hidden)?;
        let state_net = p.state_net.clone();
        let policy_net = p.policy_net.clone();
        state_net.init_xavier(&mut p.params, rng);
        policy_net.init_xavier(&mut p.params, rng);
        Ok(p)
    }

    pub fn obs_input(&self) -> ObsInput {
        self.obs_input
    }

    fn state_input(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        check_index("s_prev", ctx.s_prev, self.n_agent_states)?;
        check_index("a_prev", ctx.a_prev, self.n_actions)?;
        let mut x = vec![0.0; self.n_agent_states + self.n_actions + self.obs_input.width()];
        x[ctx.s_prev] = 1.0;
        x[self.n_agent_states + ctx.a_prev] = 1.0;
        let base = self.n_agent_states + self.n_actions;
        match (self.obs_input, ctx.obs) {
            (ObsInput::OneHot { n_obs }, Observation::Symbol(o)) => {
                check_index("observation", *o, n_obs)?;
                x[base + o] = 1.0;
            }
            (ObsInput::Real { dim, scale }, Observation::Vector(v)) => {
                if v.len() != dim {
                    return Err(Error::Shape(format!("observation has {} components, expected {dim}", v.len())));
                }
                for (xi, vi) in x[base..].iter_mut().zip(v) {
                    *xi = vi / scale;
                }
            }
            _ => return Err(Error::Shape("observation kind does not match the network input".into())),
        }
        Ok(x)
    }

    fn policy_input(&self, s: usize) -> Result<Vec<f64>> {
        check_index("s", s, self.n_agent_states)?;
        let mut x = vec![0.0; self.n_agent_states];
        x[s] = 1.0;
        Ok(x)
    }

    fn state_logits(&self, ctx: &StepContext<'_>) -> Result<Vec<Vec<f64>>> {
        Ok(self.state_net.forward(&self.params, self.state_input(ctx)?))
    }

    fn policy_logits(&self, s: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.policy_net.forward(&self.params, self.policy_input(s)?))
    }

    /// Sums logit gradients per distinct context and backpropagates once per
    /// context. With `barrier` the per-visit logit gradient is `w(1 − n p)`,
    /// otherwise `w(e_chosen − p)`.
    fn accumulate<'a>(
        &self,
        items: impl Iterator<Item = (StepTransition<'a>, f64)>,
        barrier: bool,
        out: &mut [f64],
    ) -> Result<()> {
        type Group<'a> = (StepContext<'a>, Vec<f64>, f64);
        let (n_s, n_a) = (self.n_agent_states, self.n_actions);
        let mut nu_groups: BTreeMap<(usize, usize, usize), Group<'a>> = BTreeMap::new();
        let mut nu_loose: Vec<Group<'a>> = Vec::new();
        let mut phi_groups: BTreeMap<usize, (Vec<f64>, f64)> = BTreeMap::new();
        for (tr, w) in items {
            check_index("s", tr.s, n_s)?;
            check_index("a", tr.a, n_a)?;
            let nu = match tr.ctx.obs {
                Observation::Symbol(o) => nu_groups
                    .entry((tr.ctx.s_prev, tr.ctx.a_prev, *o))
                    .or_insert_with(|| (tr.ctx, vec![0.0; n_s], 0.0)),
                Observation::Vector(_) => {
                    nu_loose.push((tr.ctx, vec![0.0; n_s], 0.0));
                    nu_loose.last_mut().expect("just pushed")
                }
            };
            let phi = phi_groups.entry(tr.s).or_insert_with(|| (vec![0.0; n_a], 0.0));
            if barrier {
                nu.1.iter_mut().for_each(|b| *b += w);
                phi.0.iter_mut().for_each(|b| *b += w);
            } else {
                nu.1[tr.s] += w;
                phi.0[tr.a] += w;
            }
            nu.2 += w;
            phi.1 += w;
        }
        let grad_logits = |z: &[f64], base: &[f64], total: f64| -> Vec<f64> {
            let mut p = vec![0.0; z.len()];
            softmax(z, &mut p);
            let c = if barrier { z.len() as f64 } else { 1.0 };
            base.iter().zip(&p).map(|(b, pi)| b - total * c * pi).collect()
        };
        for (ctx, base, total) in nu_groups.values().chain(nu_loose.iter()) {
            let acts = self.state_logits(ctx)?;
            let dz = grad_logits(acts.last().expect("network has an output layer"), base, *total);
            self.state_net.backward(&self.params, &acts, dz, out);
        }
        for (s, (base, total)) in &phi_groups {
            let acts = self.policy_logits(*s)?;
            let dz = grad_logits(acts.last().expect("network has an output layer"), base, *total);
            self.policy_net.backward(&self.params, &acts, dz, out);
        }
        Ok(())
    }
}

impl AsmPolicy for MlpAsm {
    fn descriptor(&self) -> PolicyDescriptor {
        PolicyDescriptor::Mlp {
            n_actions: self.n_actions,
            n_agent_states: self.n_agent_states,
            obs_input: self.obs_input,
            hidden: self.hidden,
        }
    }

    fn n_agent_states(&self) -> usize {
        self.n_agent_states
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn blocks(&self) -> Vec<ParamBlock> {
        vec![
            ParamBlock {
                head: Head::Nu,
                time_block: 0,
                offset: 0,
                len: self.state_net.n_params(),
            },
            ParamBlock {
                head: Head::Phi,
                time_block: 0,
                offset: self.policy_net.offset,
                len: self.policy_net.n_params(),
            },
        ]
    }

    fn horizon_limit(&self) -> Option<usize> {
        None
    }

    fn joint_dist(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        let nu = self.nu_dist(ctx)?;
        let mut out = vec![0.0; self.n_agent_states * self.n_actions];
        for (s, &ps) in nu.iter().enumerate() {
            for (a, pa) in self.phi_dist(s, ctx.t)?.into_iter().enumerate() {
                out[s * self.n_actions + a] = ps * pa;
            }
        }
        Ok(out)
    }

    fn log_prob_step(&self, tr: &StepTransition<'_>) -> Result<f64> {
        check_index("s", tr.s, self.n_agent_states)?;
        check_index("a", tr.a, self.n_actions)?;
        let acts = self.state_logits(&tr.ctx)?;
        let z = acts.last().expect("network has an output layer");
        let mut lp_s = vec![0.0; z.len()];
        log_softmax(z, &mut lp_s);
        let acts = self.policy_logits(tr.s)?;
        let z = acts.last().expect("network has an output layer");
        let mut lp_a = vec![0.0; z.len()];
        log_softmax(z, &mut lp_a);
        Ok(lp_s[tr.s] + lp_a[tr.a])
    }

    fn add_score(&self, tr: &StepTransition<'_>, weight: f64, out: &mut [f64]) -> Result<()> {
        self.accumulate(std::iter::once((*tr, weight)), false, out)
    }

    fn add_scores(&self, steps: &[(StepTransition<'_>, f64)], out: &mut [f64]) -> Result<()> {
        self.accumulate(steps.iter().copied(), false, out)
    }

    fn sample_step(&self, rng: &mut dyn RngCore, ctx: &StepContext<'_>) -> Result<(usize, usize, f64)> {
        let acts = self.state_logits(ctx)?;
        let z = acts.last().expect("network has an output layer");
        let mut lp_s = vec![0.0; z.len()];
        log_softmax(z, &mut lp_s);
        let nu: Vec<f64> = lp_s.iter().map(|l| l.exp()).collect();
        let s = sample_categorical(rng, &nu);
        let acts = self.policy_logits(s)?;
        let z = acts.last().expect("network has an output layer");
        let mut lp_a = vec![0.0; z.len()];
        log_softmax(z, &mut lp_a);
        let phi: Vec<f64> = lp_a.iter().map(|l| l.exp()).collect();
        let a = sample_categorical(rng, &phi);
        Ok((s, a, lp_s[s] + lp_a[a]))
    }

    fn barrier_value(&self, tr: &StepTransition<'_>) -> Result<f64> {
        let acts = self.state_logits(&tr.ctx)?;
        let z = acts.last().expect("network has an output layer");
        let mut lp = vec![0.0; z.len()];
        log_softmax(z, &mut lp);
        let nu: f64 = lp.iter().sum();
        let acts = self.policy_logits(tr.s)?;
        let z = acts.last().expect("network has an output layer");
        let mut lp = vec![0.0; z.len()];
        log_softmax(z, &mut lp);
        Ok(nu + lp.iter().sum::<f64>())
    }

    fn add_barrier_grad(&self, tr: &StepTransition<'_>, weight: f64, out: &mut [f64]) -> Result<()> {
        self.accumulate(std::iter::once((*tr, weight)), true, out)
    }

    fn add_barrier_grads(&self, steps: &[StepTransition<'_>], weight: f64, out: &mut [f64]) -> Result<()> {
        self.accumulate(steps.iter().map(|tr| (*tr, weight)), true, out)
    }

    fn score_bounds(&self) -> Option<ScoreBounds> {
        None
    }
}

impl FactorizedAsm for MlpAsm {
    fn nu_dist(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        let acts = self.state_logits(ctx)?;
        let z = acts.last().expect("network has an output layer");
        let mut p = vec![0.0; z.len()];
        softmax(z, &mut p);
        Ok(p)
    }

    fn phi_dist(&self, s: usize, _t: usize) -> Result<Vec<f64>> {
        let acts = self.policy_logits(s)?;
        let z = acts.last().expect("network has an output layer");
        let mut p = vec![0.0; z.len()];
        softmax(z, &mut p);
        Ok(p)
    }
}
