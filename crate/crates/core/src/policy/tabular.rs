use rand::{Rng, RngCore};

use super::{
    check_index, sample_categorical, symbol_of, write_softmax_hessian, ActiveHessian, AsmPolicy, FactorizedAsm,
    Head, ParamBlock, PolicyDescriptor, ScoreBounds, StepContext, StepTransition, TimeBlocks,
};
use crate::error::{Error, Result};
use crate::math::{log_softmax, softmax};
use crate::nmdp::Alphabet;

/// Separate softmax tables for the agent-state kernel and the control kernel.
///
/// Per time block the parameters are the `ν` logits indexed by
/// `(s̃, ã, o, s)` followed by the `φ` logits indexed by `(s, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularSoftmaxAsm {
    alphabet: Alphabet,
    time_blocks: TimeBlocks,
    params: Vec<f64>,
}

impl TabularSoftmaxAsm {
    pub fn zeros(alphabet: Alphabet, time_blocks: TimeBlocks) -> Self {
        let dim = Self::block_len_of(&alphabet) * time_blocks.count();
        TabularSoftmaxAsm {
            alphabet,
            time_blocks,
            params: vec![0.0; dim],
        }
    }

    /// Parameters drawn uniformly from `[-scale, scale]`.
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
        Ok(TabularSoftmaxAsm { params, ..p })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn time_blocks(&self) -> TimeBlocks {
        self.time_blocks
    }

    fn nu_len_of(a: &Alphabet) -> usize {
        a.n_agent_states * a.n_actions * a.n_obs * a.n_agent_states
    }

    fn block_len_of(a: &Alphabet) -> usize {
        Self::nu_len_of(a) + a.n_agent_states * a.n_actions
    }

    /// Offset of the `ν` logits for context `(s̃, ã, o)` in time block `tb`.
    pub fn nu_offset(&self, tb: usize, s_prev: usize, a_prev: usize, o: usize) -> usize {
        let a = &self.alphabet;
        tb * Self::block_len_of(a) + ((s_prev * a.n_actions + a_prev) * a.n_obs + o) * a.n_agent_states
    }

    /// Offset of the `φ` logits for agent state `s` in time block `tb`.
    pub fn phi_offset(&self, tb: usize, s: usize) -> usize {
        let a = &self.alphabet;
        tb * Self::block_len_of(a) + Self::nu_len_of(a) + s * a.n_actions
    }

    fn nu_slice(&self, ctx: &StepContext<'_>) -> Result<usize> {
        let a = &self.alphabet;
        check_index("s_prev", ctx.s_prev, a.n_agent_states)?;
        check_index("a_prev", ctx.a_prev, a.n_actions)?;
        let o = symbol_of(ctx.obs, a.n_obs)?;
        let tb = self.time_blocks.block(ctx.t)?;
        Ok(self.nu_offset(tb, ctx.s_prev, ctx.a_prev, o))
    }

    fn phi_slice(&self, s: usize, t: usize) -> Result<usize> {
        check_index("s", s, self.alphabet.n_agent_states)?;
        let tb = self.time_blocks.block(t)?;
        Ok(self.phi_offset(tb, s))
    }

    fn heads(&self, tr: &StepTransition<'_>) -> Result<(usize, usize)> {
        let nu = self.nu_slice(&tr.ctx)?;
        let phi = self.phi_slice(tr.s, tr.ctx.t)?;
        check_index("a", tr.a, self.alphabet.n_actions)?;
        Ok((nu, phi))
    }
}

fn add_softmax_score(logits: &[f64], chosen: usize, weight: f64, out: &mut [f64]) {
    let mut p = vec![0.0; logits.len()];
    softmax(logits, &mut p);
    for (i, (o, pi)) in out.iter_mut().zip(&p).enumerate() {
        let ind = if i == chosen { 1.0 } else { 0.0 };
        *o += weight * (ind - pi);
    }
}

fn add_barrier(logits: &[f64], weight: f64, out: &mut [f64]) {
    let mut p = vec![0.0; logits.len()];
    softmax(logits, &mut p);
    let n = logits.len() as f64;
    for (o, pi) in out.iter_mut().zip(&p) {
        *o += weight * (1.0 - n * pi);
    }
}

fn log_sum(logits: &[f64]) -> f64 {
    let mut lp = vec![0.0; logits.len()];
    log_softmax(logits, &mut lp);
    lp.iter().sum()
}

impl AsmPolicy for TabularSoftmaxAsm {
    fn descriptor(&self) -> PolicyDescriptor {
        PolicyDescriptor::Tabular {
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
        let a = &self.alphabet;
        let nu_len = Self::nu_len_of(a);
        let block = Self::block_len_of(a);
        (0..self.time_blocks.count())
            .flat_map(|tb| {
                [
                    ParamBlock {
                        head: Head::Nu,
                        time_block: tb,
                        offset: tb * block,
                        len: nu_len,
                    },
                    ParamBlock {
                        head: Head::Phi,
                        time_block: tb,
                        offset: tb * block + nu_len,
                        len: block - nu_len,
                    },
                ]
            })
            .collect()
    }

    fn horizon_limit(&self) -> Option<usize> {
        self.time_blocks.horizon_limit()
    }

    fn joint_dist(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        let nu = self.nu_dist(ctx)?;
        let n_a = self.alphabet.n_actions;
        let mut out = vec![0.0; nu.len() * n_a];
        for (s, &ps) in nu.iter().enumerate() {
            let phi = self.phi_dist(s, ctx.t)?;
            for (a, &pa) in phi.iter().enumerate() {
                out[s * n_a + a] = ps * pa;
            }
        }
        Ok(out)
    }

    fn log_prob_step(&self, tr: &StepTransition<'_>) -> Result<f64> {
        let (nu, phi) = self.heads(tr)?;
        let n_s = self.alphabet.n_agent_states;
        let n_a = self.alphabet.n_actions;
        let mut lp_s = vec![0.0; n_s];
        log_softmax(&self.params[nu..nu + n_s], &mut lp_s);
        let mut lp_a = vec![0.0; n_a];
        log_softmax(&self.params[phi..phi + n_a], &mut lp_a);
        Ok(lp_s[tr.s] + lp_a[tr.a])
    }

    fn add_score(&self, tr: &StepTransition<'_>, weight: f64, out: &mut [f64]) -> Result<()> {
        let (nu, phi) = self.heads(tr)?;
        let n_s = self.alphabet.n_agent_states;
        let n_a = self.alphabet.n_actions;
        add_softmax_score(&self.params[nu..nu + n_s], tr.s, weight, &mut out[nu..nu + n_s]);
        add_softmax_score(&self.params[phi..phi + n_a], tr.a, weight, &mut out[phi..phi + n_a]);
        Ok(())
    }

    fn sample_step(&self, rng: &mut dyn RngCore, ctx: &StepContext<'_>) -> Result<(usize, usize, f64)> {
        let nu = self.nu_dist(ctx)?;
        let s = sample_categorical(rng, &nu);
        let phi = self.phi_dist(s, ctx.t)?;
        let a = sample_categorical(rng, &phi);
        let log_prob = self.log_prob_step(&StepTransition { ctx: *ctx, s, a })?;
        Ok((s, a, log_prob))
    }

    fn barrier_value(&self, tr: &StepTransition<'_>) -> Result<f64> {
        let (nu, phi) = self.heads(tr)?;
        let n_s = self.alphabet.n_agent_states;
        let n_a = self.alphabet.n_actions;
        Ok(log_sum(&self.params[nu..nu + n_s]) + log_sum(&self.params[phi..phi + n_a]))
    }

    fn add_barrier_grad(&self, tr: &StepTransition<'_>, weight: f64, out: &mut [f64]) -> Result<()> {
        let (nu, phi) = self.heads(tr)?;
        let n_s = self.alphabet.n_agent_states;
        let n_a = self.alphabet.n_actions;
        add_barrier(&self.params[nu..nu + n_s], weight, &mut out[nu..nu + n_s]);
        add_barrier(&self.params[phi..phi + n_a], weight, &mut out[phi..phi + n_a]);
        Ok(())
    }

    /// Block-diagonal: the `ν` block followed by the `φ` block.
    fn hessian_log_prob(&self, tr: &StepTransition<'_>) -> Result<ActiveHessian> {
        let (nu, phi) = self.heads(tr)?;
        let n_s = self.alphabet.n_agent_states;
        let n_a = self.alphabet.n_actions;
        let n = n_s + n_a;
        let mut matrix = vec![0.0; n * n];
        let mut p = vec![0.0; n_s];
        softmax(&self.params[nu..nu + n_s], &mut p);
        write_softmax_hessian(&p, &mut matrix, n, 0);
        let mut q = vec![0.0; n_a];
        softmax(&self.params[phi..phi + n_a], &mut q);
        write_softmax_hessian(&q, &mut matrix, n, n_s);
        let indices = (nu..nu + n_s).chain(phi..phi + n_a).collect();
        Ok(ActiveHessian { indices, matrix })
    }

    /// Each head contributes a score of norm below `√2` on disjoint
    /// coordinates, so the combined score is below 2; the Hessian is
    /// block-diagonal with blocks of norm at most 1.
    fn score_bounds(&self) -> Option<ScoreBounds> {
        Some(ScoreBounds { g: 2.0, m: 1.0 })
    }
}

impl FactorizedAsm for TabularSoftmaxAsm {
    fn nu_dist(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        let off = self.nu_slice(ctx)?;
        let n_s = self.alphabet.n_agent_states;
        let mut p = vec![0.0; n_s];
        softmax(&self.params[off..off + n_s], &mut p);
        Ok(p)
    }

    fn phi_dist(&self, s: usize, t: usize) -> Result<Vec<f64>> {
        let off = self.phi_slice(s, t)?;
        let n_a = self.alphabet.n_actions;
        let mut p = vec![0.0; n_a];
        softmax(&self.params[off..off + n_a], &mut p);
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmdp::Observation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(obs: &Observation) -> StepContext<'_> {
        StepContext {
            s_prev: 0,
            a_prev: 0,
            obs,
            t: 1,
        }
    }

    #[test]
    fn uniform_at_zero() {
        let p = TabularSoftmaxAsm::zeros(Alphabet::new(3, 4, 4).unwrap(), TimeBlocks::Shared);
        let o = Observation::Symbol(2);
        assert_eq!(p.nu_dist(&ctx(&o)).unwrap(), vec![0.25; 4]);
        assert_eq!(p.phi_dist(1, 1).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn softmax_arithmetic() {
        let mut p = TabularSoftmaxAsm::zeros(Alphabet::new(1, 2, 2).unwrap(), TimeBlocks::Shared);
        let nu = p.nu_offset(0, 0, 0, 0);
        p.params[nu] = 3f64.ln();
        let phi = p.phi_offset(0, 1);
        p.params[phi + 1] = 9f64.ln();
        let o = Observation::Symbol(0);
        let d = p.nu_dist(&ctx(&o)).unwrap();
        assert!((d[0] - 0.75).abs() < 1e-15 && (d[1] - 0.25).abs() < 1e-15);
        let d = p.phi_dist(1, 1).unwrap();
        assert!((d[0] - 0.1).abs() < 1e-15 && (d[1] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn score_at_zero_is_indicator_minus_half() {
        let p = TabularSoftmaxAsm::zeros(Alphabet::new(2, 2, 2).unwrap(), TimeBlocks::Shared);
        let o = Observation::Symbol(1);
        let tr = StepTransition {
            ctx: StepContext {
                s_prev: 1,
                a_prev: 0,
                obs: &o,
                t: 1,
            },
            s: 0,
            a: 1,
        };
        let g = p.score_step(&tr).unwrap();
        let nu = p.nu_offset(0, 1, 0, 1);
        let phi = p.phi_offset(0, 0);
        assert_eq!(&g[nu..nu + 2], &[0.5, -0.5]);
        assert_eq!(&g[phi..phi + 2], &[-0.5, 0.5]);
        let nonzero = g.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 4);
        assert!((p.log_prob_step(&tr).unwrap() - 0.25f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn hessian_at_zero_has_expected_spectrum() {
        let p = TabularSoftmaxAsm::zeros(Alphabet::new(1, 2, 2).unwrap(), TimeBlocks::Shared);
        let o = Observation::Symbol(0);
        let tr = StepTransition { ctx: ctx(&o), s: 0, a: 0 };
        let h = p.hessian_log_prob(&tr).unwrap();
        let eig = h.eigenvalues();
        let expect = [-0.5, -0.5, 0.0, 0.0];
        for (e, x) in eig.iter().zip(expect) {
            assert!((e - x).abs() < 1e-12, "{eig:?}");
        }
        for row in h.matrix.chunks(4) {
            let s: f64 = row.iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn per_step_blocks_reject_late_steps() {
        let p = TabularSoftmaxAsm::zeros(Alphabet::new(1, 2, 2).unwrap(), TimeBlocks::PerStep { horizon: 3 });
        assert!(matches!(p.phi_dist(0, 4), Err(Error::Bounds { .. })));
        assert!(p.phi_dist(0, 3).is_ok());
        assert_eq!(p.blocks().len(), 6);
    }

    #[test]
    fn bad_indices_are_bounds_errors() {
        let p = TabularSoftmaxAsm::zeros(Alphabet::new(2, 2, 2).unwrap(), TimeBlocks::Shared);
        let o = Observation::Symbol(2);
        assert!(matches!(p.nu_dist(&ctx(&o)), Err(Error::Bounds { .. })));
        let o = Observation::Vector(vec![0.0]);
        assert!(matches!(p.nu_dist(&ctx(&o)), Err(Error::Shape(_))));
    }

    #[test]
    fn random_params_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = TabularSoftmaxAsm::random(Alphabet::new(2, 2, 2).unwrap(), TimeBlocks::Shared, 0.5, &mut rng);
        assert!(p.params().iter().all(|v| v.abs() <= 0.5));
    }
}
