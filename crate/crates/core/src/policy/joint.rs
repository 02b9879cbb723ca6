use rand::{Rng, RngCore};

use super::{
    check_index, sample_categorical, symbol_of, write_softmax_hessian, ActiveHessian, AsmPolicy, Head, ParamBlock,
    PolicyDescriptor, ScoreBounds, StepContext, StepTransition, TimeBlocks,
};
use crate::error::{Error, Result};
use crate::math::{log_softmax, softmax};
use crate::nmdp::Alphabet;

/// Combined-kernel softmax: one logit per `(s̃, ã, o, s, a, t)`.
///
/// This is the parametrization with `‖∇ log π‖ ≤ √2` and `‖∇² log π‖ ≤ 1`.
/// It does not in general factor into separate `ν` and `φ` kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularJointSoftmax {
    alphabet: Alphabet,
    time_blocks: TimeBlocks,
    params: Vec<f64>,
}

impl TabularJointSoftmax {
    pub fn zeros(alphabet: Alphabet, time_blocks: TimeBlocks) -> Self {
        let dim = Self::block_len_of(&alphabet) * time_blocks.count();
        TabularJointSoftmax {
            alphabet,
            time_blocks,
            params: vec![0.0; dim],
        }
    }

    pub fn random(alphabet: Alphabet, time_blocks: TimeBlocks, scale: f64, rng: &mut dyn RngCore) -> Self {
        let mut p = Self::zeros(alphabet, time_blocks);
        for v in &mut p.params {
            *v = rng.random_range(-scale..=scale);
        }
        p
    }

    pub fn with_params(alphabet: Alphabet, time_blocks: TimeBlocks, params: Vec<f64>) -> Result<Self> {
        let p = Self::zeros(alphabet, time_blocks);
        if params.len() != p.params.len() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", p.params.len(), params.len())));
        }
        Ok(TabularJointSoftmax { params, ..p })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn outcomes(&self) -> usize {
        self.alphabet.n_agent_states * self.alphabet.n_actions
    }

    fn block_len_of(a: &Alphabet) -> usize {
        let outcomes = a.n_agent_states * a.n_actions;
        outcomes * a.n_obs * outcomes
    }

    /// Offset of the logits for context `(s̃, ã, o)` in time block `tb`.
    pub fn context_offset(&self, tb: usize, s_prev: usize, a_prev: usize, o: usize) -> usize {
        let a = &self.alphabet;
        tb * Self::block_len_of(a) + ((s_prev * a.n_actions + a_prev) * a.n_obs + o) * self.outcomes()
    }

    fn slice(&self, ctx: &StepContext<'_>) -> Result<usize> {
        let a = &self.alphabet;
        check_index("s_prev", ctx.s_prev, a.n_agent_states)?;
        check_index("a_prev", ctx.a_prev, a.n_actions)?;
        let o = symbol_of(ctx.obs, a.n_obs)?;
        let tb = self.time_blocks.block(ctx.t)?;
        Ok(self.context_offset(tb, ctx.s_prev, ctx.a_prev, o))
    }

    fn outcome(&self, tr: &StepTransition<'_>) -> Result<usize> {
        check_index("s", tr.s, self.alphabet.n_agent_states)?;
        check_index("a", tr.a, self.alphabet.n_actions)?;
        Ok(tr.s * self.alphabet.n_actions + tr.a)
    }
}

impl AsmPolicy for TabularJointSoftmax {
    fn descriptor(&self) -> PolicyDescriptor {
        PolicyDescriptor::TabularJoint {
            n_obs: self.alphabet.n_obs,
            n_actions: self.alphabet.n_actions,
            n_agent_states: self.alphabet.n_agent_states,
            time_blocks: self.time_blocks,
        }
    }

    fn n_agent_states(&self) -> usize {
        self.alphabet.n_agent_states
    }

    fn n_actions(&self) -> usize {
        self.alphabet.n_actions
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn blocks(&self) -> Vec<ParamBlock> {
        let len = Self::block_len_of(&self.alphabet);
        (0..self.time_blocks.count())
            .map(|tb| ParamBlock {
                head: Head::Joint,
                time_block: tb,
                offset: tb * len,
                len,
            })
            .collect()
    }

    fn horizon_limit(&self) -> Option<usize> {
        self.time_blocks.horizon_limit()
    }

    fn joint_dist(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        let off = self.slice(ctx)?;
        let n = self.outcomes();
        let mut p = vec![0.0; n];
        softmax(&self.params[off..off + n], &mut p);
        Ok(p)
    }

    fn log_prob_step(&self, tr: &StepTransition<'_>) -> Result<f64> {
        let off = self.slice(&tr.ctx)?;
        let y = self.outcome(tr)?;
        let n = self.outcomes();
        let mut lp = vec![0.0; n];
        log_softmax(&self.params[off..off + n], &mut lp);
        Ok(lp[y])
    }

    fn add_score(&self, tr: &StepTransition<'_>, weight: f64, out: &mut [f64]) -> Result<()> {
        let off = self.slice(&tr.ctx)?;
        let y = self.outcome(tr)?;
        let n = self.outcomes();
        let mut p = vec![0.0; n];
        softmax(&self.params[off..off + n], &mut p);
        for (i, (o, pi)) in out[off..off + n].iter_mut().zip(&p).enumerate() {
            let ind = if i == y { 1.0 } else { 0.0 };
            *o += weight * (ind - pi);
        }
        Ok(())
    }

    fn sample_step(&self, rng: &mut dyn RngCore, ctx: &StepContext<'_>) -> Result<(usize, usize, f64)> {
        let p = self.joint_dist(ctx)?;
        let y = sample_categorical(rng, &p);
        let n_a = self.alphabet.n_actions;
        let (s, a) = (y / n_a, y % n_a);
        let log_prob = self.log_prob_step(&StepTransition { ctx: *ctx, s, a })?;
        Ok((s, a, log_prob))
    }

    fn barrier_value(&self, tr: &StepTransition<'_>) -> Result<f64> {
        let off = self.slice(&tr.ctx)?;
        let n = self.outcomes();
        let mut lp = vec![0.0; n];
        log_softmax(&self.params[off..off + n], &mut lp);
        Ok(lp.iter().sum())
    }

    fn add_barrier_grad(&self, tr: &StepTransition<'_>, weight: f64, out: &mut [f64]) -> Result<()> {
        let off = self.slice(&tr.ctx)?;
        let n = self.outcomes();
        let mut p = vec![0.0; n];
        softmax(&self.params[off..off + n], &mut p);
        for (o, pi) in out[off..off + n].iter_mut().zip(&p) {
            *o += weight * (1.0 - n as f64 * pi);
        }
        Ok(())
    }

    fn hessian_log_prob(&self, tr: &StepTransition<'_>) -> Result<ActiveHessian> {
        let off = self.slice(&tr.ctx)?;
        self.outcome(tr)?;
        let n = self.outcomes();
        let mut p = vec![0.0; n];
        softmax(&self.params[off..off + n], &mut p);
        let mut matrix = vec![0.0; n * n];
        write_softmax_hessian(&p, &mut matrix, n, 0);
        Ok(ActiveHessian {
            indices: (off..off + n).collect(),
            matrix,
        })
    }

    fn score_bounds(&self) -> Option<ScoreBounds> {
        Some(ScoreBounds {
            g: std::f64::consts::SQRT_2,
            m: 1.0,
        })
    }
}
