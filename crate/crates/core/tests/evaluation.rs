use nnstop::evaluation::{
    estimate_bounds, evaluate_backward, evaluate_forward, hedging_errors, variance_check, EvalOptions, Rebalance,
};
use nnstop::market::{simulate, GbmSpec, HestonSpec, Model, Payoff, TimeGrid};
use nnstop::method_one::{train_method_one, MethodOneConfig};
use nnstop::nn::{NetArchitecture, NetConfig, RegressionNets, TrainConfig};
use nnstop::policy::{ExerciseRule, Policy, PolicyKind};

fn put_model(sigma: f64) -> Model {
    Model::Gbm(GbmSpec::single(36.0, 0.06, sigma))
}

fn small_policy(model: &Model, grid: &TimeGrid, seed: u64) -> Policy {
    let paths = simulate(model, grid, 3000, seed).unwrap();
    let cfg = MethodOneConfig {
        net: NetConfig::separate(&[12, 12], &[12, 12], true),
        train: TrainConfig {
            learning_rate: 3e-3,
            batch_size: 256,
            max_epochs: 8,
            patience: 3,
            ..TrainConfig::default()
        },
        warm_start: true,
    };
    train_method_one(model, &paths, &Payoff::put(40.0), grid, &cfg, seed).unwrap().0
}

/// Policy whose networks output zero everywhere, with the given continuation
/// value added as a constant shift.
fn constant_policy(model: &Model, grid: &TimeGrid, phi: f64) -> Policy {
    let arch = NetArchitecture {
        d_in: model.d_state(),
        d_w: model.d_w(),
        config: NetConfig::separate(&[4], &[4], true),
    };
    let mut nets = RegressionNets::he_init(&arch, 1).unwrap();
    for net in &mut nets.nets {
        net.params_mut().fill(0.0);
    }
    nets.scaling.value_shift = phi;
    Policy {
        kind: PolicyKind::PerDate,
        grid: *grid,
        payoff: Payoff::put(40.0),
        rate: model.rate(),
        nets: vec![nets; grid.n_exercise],
    }
}

#[test]
fn forward_and_backward_evaluators_agree() {
    let model = put_model(0.2);
    for substeps in [1, 3] {
        let grid = TimeGrid::new(1.0, 6, substeps).unwrap();
        let policy = small_policy(&model, &grid, 5);
        for rule in [ExerciseRule::Policy, ExerciseRule::MaturityOnly] {
            let opts = EvalOptions {
                rule,
                block_size: 700,
                ..EvalOptions::default()
            };
            let f = evaluate_forward(&policy, &model, 2500, 42, &opts).unwrap();
            let b = evaluate_backward(&policy, &model, 2500, 42, rule).unwrap();
            assert_eq!(f.tau, b.tau);
            for p in 0..f.len() {
                assert!((f.lower[p] - b.lower[p]).abs() <= 1e-10, "lower differs on path {p}");
                assert!((f.upper[p] - b.upper[p]).abs() <= 1e-10, "upper differs on path {p}");
                assert!((f.stopped_payoff[p] - b.stopped_payoff[p]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn zero_volatility_bounds_are_deterministic() {
    // S_t = 36 e^{0.06 t}; the put is worth most immediately at t_1.
    let model = put_model(0.0);
    let grid = TimeGrid::new(1.0, 4, 2).unwrap();
    let policy = constant_policy(&model, &grid, 0.0);
    let est = estimate_bounds(&policy, &model, 64, &[1, 2], &EvalOptions::default()).unwrap();
    let t1: f64 = 0.25;
    let want = (-0.06 * t1).exp() * (40.0 - 36.0 * (0.06 * t1).exp());
    assert!((est.lower_mean - want).abs() < 1e-12);
    assert!((est.upper_mean - want).abs() < 1e-12);
    assert!(est.lower_se < 1e-14);
    assert!(est.gap_mean.abs() < 1e-14);
    assert!(est.lower_sd.unwrap() < 1e-14);
}

#[test]
fn without_martingale_the_control_variate_changes_nothing() {
    let model = put_model(0.2);
    let grid = TimeGrid::new(1.0, 5, 2).unwrap();
    let policy = constant_policy(&model, &grid, 3.0);
    let vc = variance_check(&policy, &model, 5000, 8).unwrap();
    assert_eq!(vc.var_plain, vc.var_cv);
    let out = evaluate_forward(&policy, &model, 5000, 8, &EvalOptions::default()).unwrap();
    assert_eq!(out.lower, out.stopped_payoff);

    let hedge = hedging_errors(&policy, &model, 5000, 8, 4.0, Rebalance::Substeps).unwrap();
    for (e, z) in hedge.eps1.iter().zip(&out.stopped_payoff) {
        assert_eq!(*e, 4.0 - z);
    }
    assert!((hedge.eps1_summary.sd - hedge.unhedged_sd).abs() < 1e-12);
    let total: usize = hedge.histogram.counts_eps1.iter().sum();
    assert_eq!(total, 5000);
}

#[test]
fn hedging_identity_with_trained_policy() {
    let model = put_model(0.2);
    let grid = TimeGrid::new(1.0, 5, 2).unwrap();
    let policy = small_policy(&model, &grid, 2);
    let out = evaluate_forward(&policy, &model, 3000, 17, &EvalOptions::default()).unwrap();
    let hedge = hedging_errors(&policy, &model, 3000, 17, 4.4, Rebalance::Substeps).unwrap();
    for p in 0..3000 {
        assert!((hedge.eps1[p] - (4.4 - out.lower[p])).abs() < 1e-12);
        assert!((hedge.eps2[p] - (4.4 - out.upper[p])).abs() < 1e-12);
        assert!(hedge.eps2[p] <= hedge.eps1[p] + 1e-12);
    }
}

#[test]
fn rebalancing_at_exercise_dates_only_differs_with_substeps() {
    let model = put_model(0.2);
    let grid1 = TimeGrid::new(1.0, 5, 1).unwrap();
    let p1 = small_policy(&model, &grid1, 3);
    let a = hedging_errors(&p1, &model, 1000, 4, 4.0, Rebalance::Substeps).unwrap();
    let b = hedging_errors(&p1, &model, 1000, 4, 4.0, Rebalance::ExerciseDates).unwrap();
    assert_eq!(a.eps1, b.eps1);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let model = put_model(0.2);
    let grid = TimeGrid::new(1.0, 5, 2).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let policy = small_policy(&model, &grid, 21);
                let est = estimate_bounds(&policy, &model, 6000, &[3, 4], &EvalOptions::default()).unwrap();
                (policy, est)
            })
    };
    let (p1, e1) = run(1);
    let (p4, e4) = run(4);
    assert_eq!(p1, p4);
    assert_eq!(e1, e4);
}

#[test]
fn policy_round_trips_through_disk() {
    let model = put_model(0.2);
    let grid = TimeGrid::new(1.0, 4, 1).unwrap();
    let policy = small_policy(&model, &grid, 6);
    let dir = tempfile::tempdir().unwrap();
    let manifest = policy.save(dir.path(), &model, &[1, 4, 5]).unwrap();
    assert_eq!(manifest.files.len(), 4);
    let (loaded, m2) = Policy::load(dir.path()).unwrap();
    assert_eq!(loaded, policy);
    assert_eq!(m2, manifest);
    let a = estimate_bounds(&policy, &model, 2000, &[1], &EvalOptions::default()).unwrap();
    let b = estimate_bounds(&loaded, &model, 2000, &[1], &EvalOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn policy_rejects_wrong_model() {
    let model = put_model(0.2);
    let grid = TimeGrid::new(1.0, 4, 1).unwrap();
    let policy = constant_policy(&model, &grid, 0.0);
    let heston = Model::Heston(HestonSpec {
        s0: 100.0,
        v0: 0.01,
        r: 0.1,
        lambda: 2.0,
        sigma_lt: 0.1,
        xi: 0.2,
        rho: -0.3,
    });
    assert!(evaluate_forward(&policy, &heston, 10, 1, &EvalOptions::default()).is_err());
}
