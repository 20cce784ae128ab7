//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.
//!
//! Set `ACCEPTANCE_ONLY=1,3,...` to run a subset.

use std::process::ExitCode;
use std::time::Instant;

use ndarray::{Array1, Array2};
use nnstop::evaluation::{
    estimate_bounds, evaluate_backward, evaluate_forward, hedging_errors, variance_check, BoundsEstimate,
    EvalOptions, Rebalance,
};
use nnstop::market::{simulate, GbmSpec, HestonSpec, Model, Payoff, TimeGrid};
use nnstop::method_one::{train_method_one, MethodOneConfig};
use nnstop::method_two::{train_method_two, AlternationConfig, MethodTwoConfig, TrainingData};
use nnstop::nn::{AdamConfig, AdamState, NetArchitecture, NetConfig, RegressionBatch, RegressionNets, TrainConfig};
use nnstop::policy::{ExerciseRule, Policy};
use nnstop::rng::{derive_seed, purpose, seeded};
use rand::Rng;
use rand_distr::StandardNormal;

/// CRR tree, 10^4 steps, 50 exercise dates.
const BERMUDAN_PUT_50: f64 = 4.477869970831249;
/// Black-Scholes put, S0=36, K=40, r=0.06, sigma=0.2, T=1.
const EUROPEAN_PUT: f64 = 3.84430779159684;

const MASTER: u64 = 2024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn put_model() -> Model {
    Model::Gbm(GbmSpec::single(36.0, 0.06, 0.2))
}

fn put_grid() -> TimeGrid {
    TimeGrid::new(1.0, 50, 1).unwrap()
}

fn heston_model() -> Model {
    Model::Heston(HestonSpec {
        s0: 100.0,
        v0: 0.01,
        r: 0.1,
        lambda: 2.0,
        sigma_lt: 0.1,
        xi: 0.2,
        rho: -0.3,
    })
}

fn max_call_model() -> Model {
    Model::Gbm(GbmSpec::iid(5, 36.0, 0.05, 0.1, 0.2))
}

fn method_one_config(net: NetConfig) -> MethodOneConfig {
    MethodOneConfig {
        net,
        train: TrainConfig {
            learning_rate: 1e-3,
            lr_decay: 0.9,
            batch_size: 512,
            max_epochs: 200,
            patience: 5,
            ..TrainConfig::default()
        },
        warm_start: true,
    }
}

fn paper_nets(second_term: bool) -> NetConfig {
    NetConfig::separate(&[50, 50], &[50, 30, 30], second_term)
}

fn train_one(model: &Model, grid: &TimeGrid, payoff: &Payoff, n: usize, cfg: &MethodOneConfig, seed: u64) -> Policy {
    let paths = simulate(model, grid, n, derive_seed(seed, purpose::TRAIN_PATHS, 0)).unwrap();
    train_method_one(model, &paths, payoff, grid, cfg, seed).unwrap().0
}

fn eval(policy: &Policy, model: &Model, n: usize, seed: u64, rule: ExerciseRule) -> BoundsEstimate {
    let opts = EvalOptions {
        rule,
        ..EvalOptions::default()
    };
    estimate_bounds(policy, model, n, &[derive_seed(seed, purpose::EVAL_REPEAT, 0)], &opts).unwrap()
}

fn fmt_bounds(b: &BoundsEstimate) -> String {
    format!(
        "lower {:.4} (se {:.4}), upper {:.4} (se {:.4}), gap {:.4}",
        b.lower_mean, b.lower_se, b.upper_mean, b.upper_se, b.gap_mean
    )
}

/// Shared state: later criteria reuse the criterion-1 and criterion-2 policies.
#[derive(Default)]
struct Ctx {
    one: Option<(Policy, BoundsEstimate)>,
    two: Option<Policy>,
}

impl Ctx {
    fn method_one_put(&mut self) -> &(Policy, BoundsEstimate) {
        if self.one.is_none() {
            let (model, grid) = (put_model(), put_grid());
            let policy = train_one(
                &model,
                &grid,
                &Payoff::put(40.0),
                50_000,
                &method_one_config(paper_nets(true)),
                MASTER,
            );
            let b = eval(&policy, &model, 100_000, MASTER, ExerciseRule::Policy);
            self.one = Some((policy, b));
        }
        self.one.as_ref().unwrap()
    }

    fn method_two_put(&mut self) -> &Policy {
        if self.two.is_none() {
            let (model, grid) = (put_model(), put_grid());
            let paths = simulate(&model, &grid, 50_000, derive_seed(MASTER, purpose::TRAIN_PATHS, 0)).unwrap();
            let h = [75; 5];
            let cfg = MethodTwoConfig {
                net: NetConfig::separate(&h, &h, true),
                train: TrainConfig {
                    learning_rate: 1e-3,
                    batch_size: 512,
                    ..TrainConfig::default()
                },
                alternation: AlternationConfig {
                    max_rounds: 12,
                    ..AlternationConfig::default()
                },
            };
            let (p, _) =
                train_method_two(&model, TrainingData::Fixed(&paths), &Payoff::put(40.0), &grid, &cfg, MASTER)
                    .unwrap();
            self.two = Some(p);
        }
        self.two.as_ref().unwrap()
    }
}

fn criterion_1(ctx: &mut Ctx) -> Outcome {
    let (_, b) = ctx.method_one_put();
    let cse = b.combined_se();
    let lower_ok = (4.45..=4.49).contains(&b.lower_mean);
    let upper_ok = (4.47..=4.51).contains(&b.upper_mean);
    let gap_ok = b.gap_mean <= 0.04;
    let bracket = b.lower_mean - 3.0 * cse <= BERMUDAN_PUT_50 && BERMUDAN_PUT_50 <= b.upper_mean + 3.0 * cse;
    outcome(
        lower_ok && upper_ok && gap_ok && bracket,
        format!("{}; reference {BERMUDAN_PUT_50:.4}", fmt_bounds(b)),
    )
}

fn criterion_2(ctx: &mut Ctx) -> Outcome {
    let policy = ctx.method_two_put().clone();
    let b = eval(&policy, &put_model(), 100_000, MASTER, ExerciseRule::Policy);
    outcome(
        b.gap_mean <= 0.05,
        format!("{}; {} parameters", fmt_bounds(&b), policy.param_count()),
    )
}

fn criterion_3(ctx: &mut Ctx) -> Outcome {
    let model = put_model();
    let p1 = ctx.method_one_put().0.clone();
    let p2 = ctx.method_two_put().clone();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, p) in [("I", &p1), ("II", &p2)] {
        let b = eval(p, &model, 100_000, MASTER + 1, ExerciseRule::MaturityOnly);
        let ok = (b.lower_mean - EUROPEAN_PUT).abs() <= 3.0 * b.lower_se;
        pass &= ok;
        parts.push(format!("{name}: {:.4} (se {:.4})", b.lower_mean, b.lower_se));
    }
    outcome(pass, format!("{}; Black-Scholes {EUROPEAN_PUT:.4}", parts.join(", ")))
}

fn criterion_4(ctx: &mut Ctx) -> Outcome {
    let policy = ctx.method_one_put().0.clone();
    let seed = derive_seed(MASTER, purpose::EVAL_REPEAT, 0);
    let vc = variance_check(&policy, &put_model(), 100_000, seed).unwrap();
    let f = vc.reduction_factor();
    outcome(
        vc.var_cv < vc.var_plain && f >= 2.0,
        format!("plain {:.4}, control variate {:.6}, factor {f:.1}", vc.var_plain, vc.var_cv),
    )
}

fn criterion_5(ctx: &mut Ctx) -> Outcome {
    let (policy, b) = ctx.method_one_put();
    let v0 = b.lower_mean;
    let h = hedging_errors(
        policy,
        &put_model(),
        100_000,
        derive_seed(MASTER, purpose::HEDGING, 0),
        v0,
        Rebalance::Substeps,
    )
    .unwrap();
    let s = &h.eps1_summary;
    outcome(
        s.mean.abs() <= 3.0 * s.se && s.sd <= 0.15 * v0,
        format!(
            "mean eps1 {:.5} (se {:.5}), sd eps1 {:.4} vs limit {:.4}; unhedged sd {:.4}",
            s.mean,
            s.se,
            s.sd,
            0.15 * v0,
            h.unhedged_sd
        ),
    )
}

fn criterion_6(_: &mut Ctx) -> Outcome {
    let model = heston_model();
    let payoff = Payoff::put(100.0);
    // Smaller batches and longer patience: the variance state makes the
    // martingale regression slower to fit at this sample size.
    let mut cfg = method_one_config(paper_nets(true));
    cfg.train = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 128,
        max_epochs: 600,
        patience: 30,
        validation_fraction: 0.1,
        ..TrainConfig::default()
    };
    let mut res = Vec::new();
    for m in [1, 15] {
        let grid = TimeGrid::new(1.0, 10, m).unwrap();
        let p = train_one(&model, &grid, &payoff, 20_000, &cfg, MASTER + 6);
        res.push(eval(&p, &model, 100_000, MASTER + 6, ExerciseRule::Policy));
    }
    let (b1, b15) = (&res[0], &res[1]);
    let cse = (b1.upper_se.powi(2) + b15.upper_se.powi(2)).sqrt();
    let drop = b1.upper_mean - b15.upper_mean;
    outcome(
        drop > 2.0 * cse && b15.gap_mean <= 0.02,
        format!(
            "m=1: {}; m=15: {}; upper drop {drop:.4} vs 2se {:.4}",
            fmt_bounds(b1),
            fmt_bounds(b15),
            2.0 * cse
        ),
    )
}

fn criterion_7(_: &mut Ctx) -> Outcome {
    let model = max_call_model();
    let payoff = Payoff::max_call(40.0);
    let n_train = 20_000;
    let n_eval = 50_000;
    let mut detail = Vec::new();

    // Bracketing and the substep effect.
    let cfg = method_one_config(paper_nets(true));
    let grid1 = TimeGrid::new(3.0, 9, 1).unwrap();
    let grid5 = TimeGrid::new(3.0, 9, 5).unwrap();
    let b1 = eval(&train_one(&model, &grid1, &payoff, n_train, &cfg, MASTER + 7), &model, n_eval, MASTER + 7, ExerciseRule::Policy);
    let b5 = eval(&train_one(&model, &grid5, &payoff, n_train, &cfg, MASTER + 7), &model, n_eval, MASTER + 7, ExerciseRule::Policy);
    let bracket = [&b1, &b5].iter().all(|b| b.lower_mean <= b.upper_mean + 2.0 * b.combined_se());
    let cse = (b1.upper_se.powi(2) + b5.upper_se.powi(2)).sqrt();
    let substep = b1.upper_mean - b5.upper_mean > 2.0 * cse;
    detail.push(format!("m=1: {}; m=5: {}", fmt_bounds(&b1), fmt_bounds(&b5)));

    // Separate against shared networks over seeded repeats.
    let split = method_one_config(paper_nets(false));
    let shared = method_one_config(NetConfig::shared(&[50, 50], false));
    let (mut g_split, mut g_shared) = (0.0, 0.0);
    for r in 0..5u64 {
        let seed = derive_seed(MASTER, 70, r);
        for (cfg, acc) in [(&split, &mut g_split), (&shared, &mut g_shared)] {
            let p = train_one(&model, &grid1, &payoff, n_train, cfg, seed);
            *acc += eval(&p, &model, n_eval, seed, ExerciseRule::Policy).gap_mean / 5.0;
        }
    }
    let v5 = g_split <= g_shared;
    detail.push(format!("mean gap split {g_split:.4} vs shared {g_shared:.4}"));
    detail.push(format!("bracket {bracket}, substeps {substep}, split {v5}"));
    outcome(bracket && substep && v5, detail.join("; "))
}

/// Largest relative error between analytic and central-difference gradients.
fn max_gradient_error() -> f64 {
    let arch = NetArchitecture {
        d_in: 2,
        d_w: 2,
        config: NetConfig::separate(&[6, 5], &[5], true),
    };
    let mut nets = RegressionNets::he_init(&arch, 3).unwrap();
    let (n, m) = (12, 3);
    let mut rng = seeded(11);
    let mut batch = RegressionBatch::new(n, m, 2, 2, 0.1);
    batch.inputs = Array2::from_shape_fn((n * m, 2), |_| rng.sample::<f64, _>(StandardNormal));
    batch.dw = Array2::from_shape_fn((n * m, 2), |_| 0.3 * rng.sample::<f64, _>(StandardNormal));
    batch.target = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
    let (_, grads) = nets.loss_and_grads(&batch).unwrap();
    let mut worst: f64 = 0.0;
    let h = 1e-6;
    for b in 0..nets.nets.len() {
        for i in 0..nets.nets[b].n_params() {
            let x0 = nets.nets[b].params()[i];
            nets.nets[b].params_mut()[i] = x0 + h;
            let up = nets.loss(&batch).unwrap();
            nets.nets[b].params_mut()[i] = x0 - h;
            let down = nets.loss(&batch).unwrap();
            nets.nets[b].params_mut()[i] = x0;
            let fd = (up - down) / (2.0 * h);
            let g = grads[b][i];
            let err = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

/// Distance to the minimiser of a convex quadratic after ADAM steps.
fn adam_quadratic_error() -> f64 {
    let mut x = [0.0f64, 0.0];
    let target = [3.0, -1.5];
    let scale = [1.0, 25.0];
    let mut state = AdamState::new([2]);
    for k in 0..5000 {
        let g: Vec<f64> = (0..2).map(|i| 2.0 * scale[i] * (x[i] - target[i])).collect();
        let lr = 0.1 * 0.998f64.powi(k);
        state.step(&AdamConfig::default(), lr, &mut [&mut x[..]], &[&g[..]]);
    }
    (0..2).map(|i| (x[i] - target[i]).abs()).fold(0.0, f64::max)
}

fn criterion_8(_: &mut Ctx) -> Outcome {
    let grad_err = max_gradient_error();
    let adam_err = adam_quadratic_error();

    let model = put_model();
    let grid = TimeGrid::new(1.0, 8, 3).unwrap();
    let cfg = MethodOneConfig {
        net: NetConfig::separate(&[16, 16], &[16, 16], true),
        train: TrainConfig {
            learning_rate: 3e-3,
            batch_size: 256,
            max_epochs: 10,
            patience: 3,
            ..TrainConfig::default()
        },
        warm_start: true,
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let p = train_one(&model, &grid, &Payoff::put(40.0), 5000, &cfg, 8);
                let b = eval(&p, &model, 20_000, 8, ExerciseRule::Policy);
                (p, b)
            })
    };
    let (p1, b1) = run(1);
    let (p3, b3) = run(3);
    let reproducible = p1 == p3 && b1 == b3;

    let f = evaluate_forward(&p1, &model, 20_000, 5, &EvalOptions::default()).unwrap();
    let b = evaluate_backward(&p1, &model, 20_000, 5, ExerciseRule::Policy).unwrap();
    let fb_err = f
        .lower
        .iter()
        .zip(&b.lower)
        .chain(f.upper.iter().zip(&b.upper))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    outcome(
        grad_err <= 1e-5 && adam_err <= 1e-6 && fb_err <= 1e-10 && reproducible && f.tau == b.tau,
        format!(
            "gradient rel err {grad_err:.2e}, adam err {adam_err:.2e}, forward/backward {fb_err:.2e}, \
             thread-count reproducible {reproducible}"
        ),
    )
}

type Criterion = fn(&mut Ctx) -> Outcome;

fn main() -> ExitCode {
    let all: [(u32, &str, Criterion); 8] = [
        (1, "1D put, per-date networks", criterion_1),
        (2, "1D put, global network", criterion_2),
        (3, "European limit, both methods", criterion_3),
        (4, "control variate variance reduction", criterion_4),
        (5, "hedging error", criterion_5),
        (6, "Heston substep effect", criterion_6),
        (7, "5D max-call properties", criterion_7),
        (8, "unit-level numerics", criterion_8),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut ctx = Ctx::default();
    let mut failed = 0;
    for (id, name, f) in all {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = f(&mut ctx);
        let secs = start.elapsed().as_secs_f64();
        failed += usize::from(!o.pass);
        println!(
            "criterion {id} {}: {name}: {} [{secs:.0}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
