use std::f64::consts::SQRT_2;

use asmpg::envs::cheese_maze::{EAST, GOAL, NORTH, N_CELLS, SOUTH, WEST};
use asmpg::envs::{make_env, tiny_nmdp, CheeseMaze, GenerativeEnv, NmdpEnv, TinyNmdp, TinySpec};
use asmpg::grad::{batch_estimate, log_barrier_grad};
use asmpg::nmdp::{Alphabet, EnumerableNmdp, ReturnSpec};
use asmpg::oracle::{exact_gradient, exact_objective, EnumOptions, SmoothnessConstants};
use asmpg::policy::{load_checkpoint, AsmPolicy, TabularJointSoftmax, TabularSoftmaxAsm, TimeBlocks};
use asmpg::trainer::*;
use asmpg::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn unit_constants() -> SmoothnessConstants {
    // r_max = 1, G = √2, M = 1, H = 1 gives β = 3 and C = 2√2
    let c = SmoothnessConstants::episodic(1.0, SQRT_2, 1.0, 1).unwrap();
    assert!((c.beta - 3.0).abs() < 1e-12);
    assert!((c.c - 2.0 * SQRT_2).abs() < 1e-12);
    c
}

#[test]
fn constant_stepsize_example() {
    let a = stepsize(&Schedule::Constant, 1, &unit_constants(), 1.0, 100, 0.1).unwrap();
    assert!((a - 0.02041).abs() < 5e-6, "{a}");
    // the same value for every k
    let b = stepsize(&Schedule::Constant, 77, &unit_constants(), 1.0, 100, 0.1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn wide_constant_is_larger_but_capped() {
    let c = unit_constants();
    let narrow = stepsize(&Schedule::Constant, 1, &c, 1.0, 100, 0.1).unwrap();
    let wide = stepsize(&Schedule::ConstantWide, 1, &c, 1.0, 100, 0.1).unwrap();
    assert!((wide / narrow - 2.0 * SQRT_2).abs() < 1e-12);
    let capped = stepsize(&Schedule::ConstantWide, 1, &c, 1e6, 1, 0.1).unwrap();
    assert_eq!(capped, 1.0 / c.beta);
}

#[test]
fn sqrt_decay_example_and_monotone() {
    let c = unit_constants();
    let a4 = stepsize(&Schedule::SqrtDecay, 4, &c, 1.0, 1, 0.1).unwrap();
    assert!((a4 - 1.0 / 6.0).abs() < 1e-15);
    for sched in [Schedule::SqrtDecay, Schedule::Custom { c: 0.5, p: 0.75 }] {
        let steps: Vec<f64> = (1..200).map(|k| stepsize(&sched, k, &c, 1.0, 1, 0.1).unwrap()).collect();
        assert!(steps.windows(2).all(|w| w[1] < w[0]));
    }
}

#[test]
fn custom_exponent_out_of_range() {
    let c = unit_constants();
    for p in [0.5, 0.3, 1.01] {
        let err = stepsize(&Schedule::Custom { c: 1.0, p }, 1, &c, 1.0, 1, 0.1).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }
    assert!(stepsize(&Schedule::Custom { c: 1.0, p: 1.0 }, 1, &c, 1.0, 1, 0.1).is_ok());
    assert!(stepsize(&Schedule::SqrtDecay, 0, &c, 1.0, 1, 0.1).is_err());
    assert!(stepsize(&Schedule::Constant, 1, &c, 1.0, 0, 0.1).is_err());
}

#[test]
fn adam_first_step_closed_form() {
    let mut adam = Adam::new(3, 0.01, 0.9, 0.999, 1e-8).unwrap();
    let mut theta = vec![1.0, -2.0, 0.5];
    let grad = [0.3, -4.0, 1e-3];
    adam.step(&mut theta, &grad).unwrap();
    // after bias correction m̂ = g and v̂ = g², so each coordinate moves lr·g/(|g|+ε)
    let expect: Vec<f64> = [1.0, -2.0, 0.5]
        .iter()
        .zip(grad)
        .map(|(t, g)| t + 0.01 * g / (g.abs() + 1e-8))
        .collect();
    for (a, b) in theta.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-15, "{a} vs {b}");
    }
    assert_eq!(adam.steps_taken(), 1);
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut adam = Adam::new(2, 0.1, 0.9, 0.999, 1e-8).unwrap();
    let mut theta = vec![0.25, -7.0];
    for _ in 0..5 {
        adam.step(&mut theta, &[0.0, 0.0]).unwrap();
    }
    assert_eq!(theta[0].to_bits(), 0.25f64.to_bits());
    assert_eq!(theta[1].to_bits(), (-7.0f64).to_bits());
}

#[test]
fn adam_five_step_reference() {
    let grads = [0.5, -0.2, 0.1, 0.8, -0.05];
    let (lr, b1, b2, eps): (f64, f64, f64, f64) = (0.05, 0.9, 0.999, 1e-8);
    // moments written out as explicit weighted sums
    let mut expect = 1.0;
    for t in 1..=5 {
        let m: f64 = (1..=t).map(|j| (1.0 - b1) * b1.powi((t - j) as i32) * grads[j - 1]).sum();
        let v: f64 = (1..=t)
            .map(|j| (1.0 - b2) * b2.powi((t - j) as i32) * grads[j - 1] * grads[j - 1])
            .sum();
        let m_hat = m / (1.0 - b1.powi(t as i32));
        let v_hat = v / (1.0 - b2.powi(t as i32));
        expect += lr * m_hat / (v_hat.sqrt() + eps);
    }
    let mut adam = Adam::new(1, lr, b1, b2, eps).unwrap();
    let mut theta = vec![1.0];
    for g in grads {
        adam.step(&mut theta, &[g]).unwrap();
    }
    assert!((theta[0] - expect).abs() < 1e-13, "{} vs {expect}", theta[0]);
}

#[test]
fn adam_rejects_bad_settings() {
    assert!(Adam::new(1, 0.0, 0.9, 0.999, 1e-8).is_err());
    assert!(Adam::new(1, 0.1, 1.0, 0.999, 1e-8).is_err());
    let mut adam = Adam::new(1, 0.1, 0.9, 0.999, 1e-8).unwrap();
    assert!(matches!(adam.step(&mut [0.0], &[f64::NAN]), Err(Error::NonFinite(_))));
}

/// A tiny NMDP with its rewards removed.
struct Silent(TinyNmdp);

impl EnumerableNmdp for Silent {
    fn n_obs(&self) -> usize {
        self.0.n_obs()
    }
    fn n_actions(&self) -> usize {
        self.0.n_actions()
    }
    fn initial_dist(&self, out: &mut [f64]) {
        self.0.initial_dist(out)
    }
    fn transition(&self, obs: &[usize], actions: &[usize], out: &mut [f64]) {
        self.0.transition(obs, actions, out)
    }
    fn reward(&self, _obs: &[usize], _actions: &[usize]) -> f64 {
        0.0
    }
    fn r_max(&self) -> f64 {
        1.0
    }
}

fn tiny(seed: u64, horizon: usize) -> TinyNmdp {
    tiny_nmdp(TinySpec {
        n_obs: 2,
        n_actions: 2,
        horizon,
        seed,
    })
    .unwrap()
}

#[test]
fn zero_reward_without_barrier_leaves_parameters_unchanged() {
    let mut env = NmdpEnv::new(Silent(tiny(5, 3)), 3, "silent".into());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let alphabet = Alphabet::new(2, 2, 3).unwrap();
    let policy = TabularSoftmaxAsm::random(alphabet, TimeBlocks::Shared, 1.0, &mut rng);
    let spec = ReturnSpec::episodic(3).unwrap();
    let trajs: Vec<_> = (0..20)
        .map(|_| rollout(&mut env, &policy, 3, true, &mut rng).unwrap().trajectory)
        .collect();
    let mut g = batch_estimate(&policy, &trajs, &spec, true).unwrap().vector;
    let barrier = log_barrier_grad(&policy, &trajs, 0.0).unwrap().vector;
    g.iter_mut().zip(&barrier).for_each(|(a, b)| *a += b);
    assert!(g.iter().all(|&x| x == 0.0));

    let constants = SmoothnessConstants::episodic(1.0, 2.0, 1.0, 3).unwrap();
    let mut optimizers = vec![
        Optimizer::Sgd {
            schedule: Schedule::SqrtDecay,
            constants,
            delta1: 3.0,
            k_budget: 10,
            delta: 0.1,
        },
        Optimizer::Adam(Adam::new(policy.dim(), 1e-2, 0.9, 0.999, 1e-8).unwrap()),
    ];
    for opt in &mut optimizers {
        let mut theta = policy.params().to_vec();
        for k in 1..=10 {
            opt.step(&mut theta, &g, k).unwrap();
        }
        let same = theta.iter().zip(policy.params()).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "{opt:?}");
    }
}

#[test]
fn exact_ascent_increases_the_objective() {
    let nmdp = tiny(21, 3);
    let spec = ReturnSpec::episodic(3).unwrap();
    let opts = EnumOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let alphabet = Alphabet::new(2, 2, 2).unwrap();
    let mut policy = TabularJointSoftmax::random(alphabet, TimeBlocks::Shared, 0.5, &mut rng);
    let constants = SmoothnessConstants::episodic(nmdp.r_max(), SQRT_2, 1.0, 3).unwrap();
    let mut opt = Optimizer::Sgd {
        schedule: Schedule::SqrtDecay,
        constants,
        delta1: 3.0,
        k_budget: 100,
        delta: 0.1,
    };
    let mut values = vec![exact_objective(&nmdp, &policy, &spec, &opts).unwrap().value];
    for k in 1..=100 {
        let g = exact_gradient(&nmdp, &policy, &spec, &opts).unwrap();
        let mut theta = policy.params().to_vec();
        let alpha = opt.step(&mut theta, &g, k).unwrap();
        assert!(alpha <= 1.0 / constants.beta);
        policy.params_mut().copy_from_slice(&theta);
        values.push(exact_objective(&nmdp, &policy, &spec, &opts).unwrap().value);
    }
    // with α ≤ 1/β every exact step gains at least α‖∇J‖²/2 ≥ 0
    assert!(values.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    assert!(values[100] > values[0]);
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        env: "tiny:9".into(),
        env_params: Default::default(),
        env_seed: 0,
        policy: PolicyConfig::Tabular {
            per_step: false,
            init_scale: 0.5,
        },
        n_agent_states: 2,
        mode: ReturnSpec::episodic(3).unwrap(),
        optimizer: OptimizerConfig::SgdConstant,
        delta1: None,
        k_budget: None,
        delta: 0.1,
        score_bounds: None,
        batch_size: 8,
        barrier: 0.0,
        total_env_steps: 2_400,
        eval_every: 600,
        eval_episodes: 50,
        seed,
        early_stop: None,
        clip_factor: 10.0,
    }
}

fn csv_of(out: &TrainOutcome) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, &out.rows).unwrap();
    strip_wall_clock(&String::from_utf8(buf).unwrap())
}

#[test]
fn training_is_deterministic_and_worker_invariant() {
    let cfg = tiny_config(3);
    let runs: Vec<TrainOutcome> = [1, 1, 3]
        .into_iter()
        .map(|workers| {
            let opts = TrainOptions {
                workers,
                ..Default::default()
            };
            train(&cfg, &opts, &TrainHooks::default()).unwrap()
        })
        .collect();
    for r in &runs[1..] {
        assert_eq!(csv_of(r), csv_of(&runs[0]));
        let same = r
            .policy
            .as_dyn()
            .params()
            .iter()
            .zip(runs[0].policy.as_dyn().params())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
    }
    let other = train(&tiny_config(4), &TrainOptions::default(), &TrainHooks::default()).unwrap();
    assert_ne!(csv_of(&other), csv_of(&runs[0]));
}

#[test]
fn run_directory_and_best_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(8);
    cfg.optimizer = OptimizerConfig::Adam {
        lr: 0.05,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let opts = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let out = train(&cfg, &opts, &TrainHooks::default()).unwrap();
    assert_eq!(out.rows.first().unwrap().env_steps, 0);
    assert!(out.rows.windows(2).all(|w| w[0].env_steps < w[1].env_steps));

    let best_score = out.rows.iter().map(|r| r.mean_return).fold(f64::NEG_INFINITY, f64::max);
    let (score, at) = out.best.unwrap();
    assert_eq!(score, best_score);
    let first_best = out.rows.iter().find(|r| r.mean_return == best_score).unwrap();
    assert_eq!(at, first_best.env_steps);

    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, &out.rows).unwrap();
    assert_eq!(csv, String::from_utf8(buf).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 8);
    for row in &out.rows {
        assert!(dir.path().join(format!("ckpt_{}.bin", row.env_steps)).exists());
    }
    let best = load_checkpoint(dir.path().join("ckpt_best.bin")).unwrap();
    let at_best = load_checkpoint(dir.path().join(format!("ckpt_{at}.bin"))).unwrap();
    assert_eq!(best.as_dyn().params(), at_best.as_dyn().params());
}

#[test]
fn exact_gradient_hook_records_every_iteration() {
    let cfg = tiny_config(5);
    let nmdp = tiny(9, 3);
    let spec = cfg.mode;
    let hook = move |p: &dyn AsmPolicy| exact_gradient(&nmdp, p, &spec, &EnumOptions::default());
    let hooks = TrainHooks {
        exact_gradient: Some(&hook),
    };
    let out = train(&cfg, &TrainOptions::default(), &hooks).unwrap();
    assert_eq!(out.exact_sq_norms.len() as u64, out.iterations);
    assert!(out.max_norm_ratio <= 1.0);
    assert_eq!(out.clipped, 0);
}

#[test]
fn config_errors() {
    let mut cfg = tiny_config(1);
    cfg.batch_size = 0;
    assert!(matches!(train(&cfg, &TrainOptions::default(), &TrainHooks::default()), Err(Error::Config(_))));
    let mut cfg = tiny_config(1);
    cfg.mode = ReturnSpec::episodic(5).unwrap();
    assert!(matches!(train(&cfg, &TrainOptions::default(), &TrainHooks::default()), Err(Error::Config(_))));
    let mut cfg = tiny_config(1);
    cfg.policy = PolicyConfig::Mlp { hidden: 4 };
    assert!(matches!(train(&cfg, &TrainOptions::default(), &TrainHooks::default()), Err(Error::Config(_))));
}

/// Memory policy for the cheese maze: the agent state is the action to take.
fn heading(s_prev: usize, o: usize) -> usize {
    match o {
        0 => EAST,
        3 => WEST,
        2 => SOUTH,
        5 => NORTH,
        1 if s_prev == WEST => WEST,
        1 => EAST,
        4 if s_prev == SOUTH => SOUTH,
        _ => NORTH,
    }
}

fn heading_policy() -> TabularSoftmaxAsm {
    let alphabet = Alphabet::new(7, 4, 4).unwrap();
    let mut p = TabularSoftmaxAsm::zeros(alphabet, TimeBlocks::Shared);
    let mut logits = p.params().to_vec();
    for s_prev in 0..4 {
        for a_prev in 0..4 {
            for o in 0..7 {
                logits[p.nu_offset(0, s_prev, a_prev, o) + heading(s_prev, o)] = 60.0;
            }
        }
    }
    for s in 0..4 {
        logits[p.phi_offset(0, s) + s] = 60.0;
    }
    p.params_mut().copy_from_slice(&logits);
    p
}

#[test]
fn evaluation_of_a_known_maze_policy() {
    // walk every start cell through the latent maze with the same rule
    let mut total = 0usize;
    for start in 0..GOAL {
        let (mut cell, mut s) = (start, NORTH);
        let mut steps = 0;
        while cell != GOAL {
            s = heading(s, CheeseMaze::observation_of(cell));
            cell = CheeseMaze::next_cell(cell, s);
            steps += 1;
            assert!(steps < 20);
        }
        total += steps;
    }
    let expected = total as f64 / GOAL as f64;
    let latent: f64 = CheeseMaze::bfs_distances()[..GOAL].iter().map(|d| d.unwrap() as f64).sum::<f64>() / GOAL as f64;
    assert!(expected >= latent);

    let policy = heading_policy();
    let env = make_env("cheese_maze", 0, &Default::default()).unwrap();
    let eval = evaluate(&policy, env, 4_000, 200, 17).unwrap();
    assert_eq!(eval.success_rate, Some(1.0));
    let steps = eval.mean_steps.unwrap();
    // start cells are uniform; the per-start lengths have sd < 1.5
    assert!((steps - expected).abs() < 0.1, "{steps} vs {expected}");
    assert!((eval.mean_return - 1.0).abs() < 1e-12);
    assert!((eval.mean_reward_per_step - 1.0 / steps).abs() < 1e-12);
}

#[test]
fn evaluation_of_the_uniform_policy() {
    // a uniform policy is a random walk on the latent cells
    let horizon = 30;
    let mut hit_at = vec![0.0; horizon + 1];
    for start in 0..GOAL {
        let mut dist = vec![0.0; N_CELLS];
        dist[start] = 1.0 / GOAL as f64;
        for t in 1..=horizon {
            let mut next = vec![0.0; N_CELLS];
            for (c, &p) in dist.iter().enumerate().take(GOAL) {
                for a in 0..4 {
                    next[CheeseMaze::next_cell(c, a)] += p / 4.0;
                }
            }
            hit_at[t] += next[GOAL];
            next[GOAL] = 0.0;
            dist = next;
        }
    }
    let success: f64 = hit_at.iter().sum();
    let mean_len: f64 = hit_at.iter().enumerate().map(|(t, p)| t as f64 * p).sum::<f64>() / success;

    let alphabet = Alphabet::new(7, 4, 3).unwrap();
    let policy = TabularSoftmaxAsm::zeros(alphabet, TimeBlocks::Shared);
    let mut params = asmpg::envs::EnvParams::new();
    params.insert("max_steps".into(), horizon.into());
    let n = 20_000;
    let eval = evaluate(&policy, make_env("cheese_maze", 0, &params).unwrap(), n, horizon, 2).unwrap();
    let rate = eval.success_rate.unwrap();
    let se = (success * (1.0 - success) / n as f64).sqrt();
    assert!((rate - success).abs() < 5.0 * se, "{rate} vs {success}");
    assert!((eval.mean_steps.unwrap() - mean_len).abs() < 0.3, "{:?} vs {mean_len}", eval.mean_steps);
}

#[test]
fn evaluation_needs_episodes() {
    let policy = heading_policy();
    let env = make_env("cheese_maze", 0, &Default::default()).unwrap();
    assert!(matches!(evaluate(&policy, env, 0, 200, 0), Err(Error::Config(_))));
}

#[test]
fn evaluation_is_reproducible() {
    let policy = TabularSoftmaxAsm::zeros(Alphabet::new(7, 4, 2).unwrap(), TimeBlocks::Shared);
    let run = |seed| evaluate(&policy, make_env("cheese_maze", 0, &Default::default()).unwrap(), 200, 200, seed).unwrap();
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn rollout_respects_the_step_limit() {
    let env: Box<dyn GenerativeEnv> = Box::new(NmdpEnv::new(tiny(1, 4), 4, "t".into()));
    let mut env = env;
    let policy = TabularSoftmaxAsm::zeros(Alphabet::new(2, 2, 2).unwrap(), TimeBlocks::Shared);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ep = rollout(env.as_mut(), &policy, 4, true, &mut rng).unwrap();
    assert_eq!(ep.trajectory.len(), 4);
    assert!(ep.trajectory.terminated);
}
