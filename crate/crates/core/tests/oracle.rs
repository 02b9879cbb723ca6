use asmpg::envs::{tiny_nmdp, LatentTracker, TinyNmdp, TinySpec};
use asmpg::math::l2_norm;
use asmpg::nmdp::{EnumerableNmdp, Observation, ReturnSpec, Trajectory};
use asmpg::oracle::{
    constants, enumerate, exact_gradient, exact_objective, exact_q, exact_v, fd_gradient, fd_hessian_norm,
    ideal_asd_optimality_check, q_form_gradient, v_gradient, with_params, EnumOptions, IdealityStatus,
};
use asmpg::policy::{AsmPolicy, MlpAsm, ObsInput, TabularJointSoftmax, TabularSoftmaxAsm, TimeBlocks};
use asmpg::nmdp::Alphabet;
use asmpg::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Constant {
    c: f64,
}

impl EnumerableNmdp for Constant {
    fn n_obs(&self) -> usize {
        2
    }
    fn n_actions(&self) -> usize {
        2
    }
    fn initial_dist(&self, out: &mut [f64]) {
        out.copy_from_slice(&[0.3, 0.7]);
    }
    fn transition(&self, _: &[usize], actions: &[usize], out: &mut [f64]) {
        let a = actions[actions.len() - 1];
        out.copy_from_slice(if a == 0 { &[0.9, 0.1] } else { &[0.2, 0.8] });
    }
    fn reward(&self, _: &[usize], _: &[usize]) -> f64 {
        self.c
    }
    fn r_max(&self) -> f64 {
        self.c.abs().max(1.0)
    }
}

fn tiny(n_obs: usize, n_actions: usize, horizon: usize, seed: u64) -> TinyNmdp {
    tiny_nmdp(TinySpec {
        n_obs,
        n_actions,
        horizon,
        seed,
    })
    .unwrap()
}

fn tabular(n_obs: usize, n_actions: usize, n_s: usize, blocks: TimeBlocks, seed: u64) -> TabularSoftmaxAsm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TabularSoftmaxAsm::random(Alphabet::new(n_obs, n_actions, n_s).unwrap(), blocks, 2.0, &mut rng)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2_norm(&diff) <= tol
}

#[test]
fn enumeration_probabilities_sum_to_one() {
    let nmdp = tiny(2, 3, 3, 4);
    let policy = tabular(2, 3, 2, TimeBlocks::Shared, 1);
    let all = enumerate(&nmdp, &policy, 3, &EnumOptions::default()).unwrap();
    assert_eq!(all.len(), (2 * 2 * 3usize).pow(3));
    let total: f64 = all.iter().map(|w| w.probability).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn constant_rewards() {
    let nmdp = Constant { c: 0.5 };
    let policy = tabular(2, 2, 3, TimeBlocks::Shared, 2);
    let opts = EnumOptions::default();
    let v = exact_objective(&nmdp, &policy, &ReturnSpec::episodic(4).unwrap(), &opts).unwrap();
    assert!((v.value - 2.0).abs() < 1e-12);
    assert_eq!(v.tail_bound, 0.0);
    let one = Constant { c: 1.0 };
    let d = exact_objective(&one, &policy, &ReturnSpec::discounted(0.5, 3).unwrap(), &opts).unwrap();
    assert!((d.value - 1.75).abs() < 1e-12);
    assert!((d.tail_bound - 0.25).abs() < 1e-12);
    let g = fd_gradient(&nmdp, &policy, &ReturnSpec::episodic(3).unwrap(), 1e-5, &opts).unwrap();
    assert!(l2_norm(&g) < 1e-9);
}

#[test]
fn objective_matches_enumerated_returns() {
    let nmdp = tiny(2, 2, 3, 0);
    let policy = tabular(2, 2, 2, TimeBlocks::PerStep { horizon: 3 }, 3);
    let opts = EnumOptions::default();
    let all = enumerate(&nmdp, &policy, 3, &opts).unwrap();
    let direct: f64 = all.iter().map(|w| w.probability * w.trajectory.total_reward()).sum();
    let v = exact_objective(&nmdp, &policy, &ReturnSpec::episodic(3).unwrap(), &opts).unwrap();
    assert!((v.value - direct).abs() < 1e-12);
}

#[test]
fn zero_reward_gradient_is_zero() {
    let nmdp = Constant { c: 0.0 };
    let policy = tabular(2, 2, 2, TimeBlocks::Shared, 5);
    let g = exact_gradient(&nmdp, &policy, &ReturnSpec::episodic(3).unwrap(), &EnumOptions::default()).unwrap();
    assert!(g.iter().all(|x| *x == 0.0));
}

#[test]
fn gradient_forms_agree() {
    let opts = EnumOptions::default();
    for seed in 0..4 {
        let nmdp = tiny(2, 2, 3, seed);
        let policy = tabular(2, 2, 2, TimeBlocks::Shared, 10 + seed);
        for spec in [ReturnSpec::episodic(3).unwrap(), ReturnSpec::discounted(0.7, 3).unwrap()] {
            let exact = exact_gradient(&nmdp, &policy, &spec, &opts).unwrap();
            let q = q_form_gradient(&nmdp, &policy, &spec, &opts).unwrap();
            let fd = fd_gradient(&nmdp, &policy, &spec, 1e-5, &opts).unwrap();
            assert!(close(&exact, &q, 1e-9), "{spec:?}");
            assert!(close(&exact, &fd, 1e-6 * l2_norm(&fd).max(1e-2)), "{spec:?}");
        }
    }
}

#[test]
fn fd_error_shrinks_quadratically() {
    let nmdp = tiny(2, 2, 3, 1);
    let policy = tabular(2, 2, 2, TimeBlocks::Shared, 6);
    let spec = ReturnSpec::episodic(3).unwrap();
    let opts = EnumOptions::default();
    let exact = exact_gradient(&nmdp, &policy, &spec, &opts).unwrap();
    let err = |h: f64| {
        let fd = fd_gradient(&nmdp, &policy, &spec, h, &opts).unwrap();
        let d: Vec<f64> = fd.iter().zip(&exact).map(|(a, b)| a - b).collect();
        l2_norm(&d)
    };
    let ratio = err(1e-3) / err(1e-4);
    assert!(ratio > 30.0 && ratio < 300.0, "ratio {ratio}");
}

#[test]
fn worker_count_does_not_change_results() {
    let nmdp = tiny(3, 2, 3, 2);
    let policy = tabular(3, 2, 2, TimeBlocks::Shared, 7);
    let spec = ReturnSpec::episodic(3).unwrap();
    let one = EnumOptions::default();
    let many = EnumOptions { workers: 3, ..one };
    assert_eq!(
        exact_gradient(&nmdp, &policy, &spec, &one).unwrap(),
        exact_gradient(&nmdp, &policy, &spec, &many).unwrap()
    );
    assert_eq!(
        exact_objective(&nmdp, &policy, &spec, &one).unwrap(),
        exact_objective(&nmdp, &policy, &spec, &many).unwrap()
    );
    assert_eq!(
        q_form_gradient(&nmdp, &policy, &spec, &one).unwrap(),
        q_form_gradient(&nmdp, &policy, &spec, &many).unwrap()
    );
}

fn prefix(steps: &[(usize, usize, usize)], nmdp: &dyn EnumerableNmdp) -> Trajectory {
    let mut traj = Trajectory::start();
    let (mut obs, mut actions) = (Vec::new(), Vec::new());
    for &(o, s, a) in steps {
        obs.push(o);
        actions.push(a);
        traj.push(Observation::Symbol(o), s, a, nmdp.reward(&obs, &actions));
    }
    traj
}

#[test]
fn q_and_v_recursions() {
    let nmdp = tiny(2, 2, 3, 3);
    let policy = tabular(2, 2, 2, TimeBlocks::Shared, 8);
    let opts = EnumOptions::default();
    for spec in [ReturnSpec::episodic(3).unwrap(), ReturnSpec::discounted(0.6, 3).unwrap()] {
        let gamma = match spec {
            ReturnSpec::Discounted { gamma, .. } => gamma,
            _ => 1.0,
        };
        // Terminal step.
        let full = prefix(&[(0, 1, 0), (1, 0, 1), (1, 1, 1)], &nmdp);
        let q = exact_q(&nmdp, &policy, &full, &spec, &opts).unwrap();
        assert_eq!(q, full.rewards[2]);

        // Q_t = r_t + γ Σ p V_{t+1}.
        let p1 = prefix(&[(1, 0, 1)], &nmdp);
        let q1 = exact_q(&nmdp, &policy, &p1, &spec, &opts).unwrap();
        let mut row = vec![0.0; 2];
        nmdp.transition(&[1], &[1], &mut row);
        let cont: f64 = (0..2)
            .map(|o| row[o] * exact_v(&nmdp, &policy, &p1, o, &spec, &opts).unwrap())
            .sum();
        assert!((q1 - (p1.rewards[0] + gamma * cont)).abs() < 1e-12);

        // V_t = Σ π Q_t.
        let empty = Trajectory::start();
        let v1 = exact_v(&nmdp, &policy, &empty, 1, &spec, &opts).unwrap();
        let ctx_obs = Observation::Symbol(1);
        let joint = policy
            .joint_dist(&asmpg::policy::StepContext {
                s_prev: 0,
                a_prev: 0,
                obs: &ctx_obs,
                t: 1,
            })
            .unwrap();
        let mix: f64 = (0..4)
            .map(|y| joint[y] * exact_q(&nmdp, &policy, &prefix(&[(1, y / 2, y % 2)], &nmdp), &spec, &opts).unwrap())
            .sum();
        assert!((v1 - mix).abs() < 1e-12);

        // J = Σ μ V_1.
        let mut mu = vec![0.0; 2];
        nmdp.initial_dist(&mut mu);
        let j: f64 = (0..2)
            .map(|o| mu[o] * exact_v(&nmdp, &policy, &empty, o, &spec, &opts).unwrap())
            .sum();
        let direct = exact_objective(&nmdp, &policy, &spec, &opts).unwrap().value;
        assert!((j - direct).abs() < 1e-12);
    }
}

#[test]
fn v_gradient_matches_fd_of_v() {
    let nmdp = tiny(2, 2, 3, 5);
    let policy = tabular(2, 2, 2, TimeBlocks::Shared, 9);
    let opts = EnumOptions::default();
    let spec = ReturnSpec::discounted(0.8, 3).unwrap();
    let p1 = prefix(&[(0, 1, 1)], &nmdp);
    let g = v_gradient(&nmdp, &policy, &p1, 1, &spec, &opts).unwrap();
    let h = 1e-5;
    let fd: Vec<f64> = (0..policy.dim())
        .map(|i| {
            let v = |d: f64| {
                let mut theta = policy.params().to_vec();
                theta[i] += d;
                let p = with_params(&policy, &theta).unwrap();
                exact_v(&nmdp, &p, &p1, 1, &spec, &opts).unwrap()
            };
            (v(h) - v(-h)) / (2.0 * h)
        })
        .collect();
    assert!(close(&g, &fd, 1e-6 * l2_norm(&fd).max(1e-2)));
}

#[test]
fn unsupported_prefix_is_rejected() {
    let policy = tabular(3, 2, 2, TimeBlocks::Shared, 1);
    let spec = ReturnSpec::episodic(3).unwrap();
    let empty = Trajectory::start();
    let err = exact_v(&LatentTracker, &policy, &empty, 2, &spec, &EnumOptions::default()).unwrap_err();
    assert!(matches!(err, Error::UndefinedConditional(_)));
    let p = prefix(&[(0, 0, 0), (0, 0, 0)], &LatentTracker);
    let err = exact_q(&LatentTracker, &policy, &p, &spec, &EnumOptions::default()).unwrap_err();
    assert!(matches!(err, Error::UndefinedConditional(_)));
}

#[test]
fn budget_and_network_errors() {
    let nmdp = tiny(4, 4, 5, 0);
    let policy = tabular(4, 4, 4, TimeBlocks::Shared, 1);
    let spec = ReturnSpec::episodic(5).unwrap();
    let err = exact_gradient(&nmdp, &policy, &spec, &EnumOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Budget { .. }));
    let mlp = MlpAsm::zeros(2, 2, ObsInput::OneHot { n_obs: 2 }, 4).unwrap();
    let small = tiny(2, 2, 2, 0);
    let spec = ReturnSpec::episodic(2).unwrap();
    let err = exact_gradient(&small, &mlp, &spec, &EnumOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)));
    // The network objective is still available to finite differences.
    assert_eq!(
        fd_gradient(&small, &mlp, &spec, 1e-5, &EnumOptions::default()).unwrap().len(),
        mlp.dim()
    );
}

#[test]
fn hessian_within_smoothness_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let nmdp = tiny(2, 2, 2, 7);
    let policy = TabularJointSoftmax::random(Alphabet::new(2, 2, 2).unwrap(), TimeBlocks::Shared, 1.5, &mut rng);
    let spec = ReturnSpec::episodic(2).unwrap();
    let norm = fd_hessian_norm(&nmdp, &policy, &spec, 1e-4, &EnumOptions::default()).unwrap();
    let beta = constants(1.0, std::f64::consts::SQRT_2, 1.0, &spec).unwrap().beta;
    assert!(norm > 0.0 && norm <= beta, "{norm} vs {beta}");
    let flat = Constant { c: 1.0 };
    let zero = fd_hessian_norm(&flat, &policy, &spec, 1e-4, &EnumOptions::default()).unwrap();
    assert!(zero < 1e-6);
}

#[test]
fn ideal_tracker_has_no_gap() {
    let ideal = ideal_asd_optimality_check(&LatentTracker, &LatentTracker::ideal_nu, 2, 3).unwrap();
    assert_eq!(ideal.ideality, IdealityStatus::Ideal);
    assert!(ideal.gap.abs() <= 1e-12);
    assert!((ideal.hr_value - 3.0).abs() < 1e-12);

    let forgetful = ideal_asd_optimality_check(&LatentTracker, &LatentTracker::forgetful_nu, 2, 3).unwrap();
    assert!(matches!(forgetful.ideality, IdealityStatus::Violated(_)));
    assert!(forgetful.gap > 0.1);

    // One step: any kernel that keeps o_1 apart is ideal, whatever the labels.
    let swap = |_: usize, _: usize, o: usize, _: usize| if o == 0 { vec![0.0, 1.0] } else { vec![1.0, 0.0] };
    let single = ideal_asd_optimality_check(&LatentTracker, &swap, 2, 1).unwrap();
    assert_eq!(single.ideality, IdealityStatus::Ideal);
    assert!(single.gap.abs() <= 1e-12);
    let lossy = ideal_asd_optimality_check(&LatentTracker, &LatentTracker::forgetful_nu, 2, 1).unwrap();
    assert!(matches!(lossy.ideality, IdealityStatus::Violated(_)));
    assert!((lossy.gap - 0.5).abs() < 1e-12);
}
