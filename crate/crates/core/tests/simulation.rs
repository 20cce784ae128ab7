use nnstop::evaluation::mean_se;
use nnstop::market::{discount, simulate, GbmSpec, HestonSpec, Model, PathBlock, Payoff, TimeGrid};
use nnstop::oracles::{bs_european_put, heston_european_put};

fn heston(rho: f64) -> HestonSpec {
    HestonSpec {
        s0: 100.0,
        v0: 0.01,
        r: 0.1,
        lambda: 2.0,
        sigma_lt: 0.1,
        xi: 0.2,
        rho,
    }
}

#[test]
fn discounted_gbm_is_a_martingale() {
    let grid = TimeGrid::new(1.0, 10, 1).unwrap();
    let model = Model::Gbm(GbmSpec::single(36.0, 0.06, 0.2));
    let paths = simulate(&model, &grid, 100_000, 1).unwrap();
    for step in [5, 10] {
        let d = discount(0.06, grid.step_time(step));
        let v: Vec<f64> = (0..paths.n_paths).map(|p| d * paths.state(p, step)[0]).collect();
        let (m, se) = mean_se(&v);
        assert!((m - 36.0).abs() < 4.0 * se, "step {step}: {m} vs 36 (se {se})");
    }
}

#[test]
fn dividend_yield_enters_the_drift() {
    let grid = TimeGrid::new(3.0, 9, 1).unwrap();
    let model = Model::Gbm(GbmSpec::iid(5, 36.0, 0.05, 0.1, 0.2));
    let paths = simulate(&model, &grid, 40_000, 2).unwrap();
    let want = 36.0 * ((0.05f64 - 0.1) * 3.0).exp();
    for asset in 0..5 {
        let v: Vec<f64> = (0..paths.n_paths).map(|p| paths.assets(p, 9)[asset]).collect();
        let (m, se) = mean_se(&v);
        assert!((m - want).abs() < 4.0 * se, "asset {asset}: {m} vs {want}");
    }
}

#[test]
fn european_put_from_gbm_paths_matches_closed_form() {
    let grid = TimeGrid::new(1.0, 1, 1).unwrap();
    let model = Model::Gbm(GbmSpec::single(36.0, 0.06, 0.2));
    let paths = simulate(&model, &grid, 100_000, 3).unwrap();
    let put = Payoff::put(40.0);
    let v: Vec<f64> = (0..paths.n_paths)
        .map(|p| discount(0.06, 1.0) * put.value(paths.assets(p, 1)))
        .collect();
    let (m, se) = mean_se(&v);
    let want = bs_european_put(36.0, 40.0, 0.06, 0.2, 1.0);
    assert!((m - want).abs() < 4.0 * se, "{m} vs {want} (se {se})");
}

#[test]
fn heston_european_put_matches_fourier_price() {
    let spec = heston(-0.3);
    let grid = TimeGrid::new(1.0, 1, 100).unwrap();
    let paths = simulate(&Model::Heston(spec.clone()), &grid, 100_000, 4).unwrap();
    let put = Payoff::put(100.0);
    let n = grid.total_steps();
    let v: Vec<f64> = (0..paths.n_paths)
        .map(|p| discount(0.1, 1.0) * put.value(paths.assets(p, n)))
        .collect();
    let (m, se) = mean_se(&v);
    let want = heston_european_put(&spec, 100.0, 1.0).unwrap().price;
    // Full-truncation Euler bias at 100 steps is far below the sampling error.
    assert!((m - want).abs() < 4.0 * se, "{m} vs {want} (se {se})");
}

#[test]
fn perfectly_anticorrelated_heston_drivers() {
    let grid = TimeGrid::new(1.0, 4, 5).unwrap();
    let paths = simulate(&Model::Heston(heston(-1.0)), &grid, 200, 5).unwrap();
    for p in 0..paths.n_paths {
        for k in 0..grid.total_steps() {
            let w = paths.increment(p, k);
            assert_eq!(w[1], -w[0]);
        }
    }
}

#[test]
fn variance_stays_finite_under_full_truncation() {
    let mut spec = heston(0.0);
    spec.xi = 1.5;
    let grid = TimeGrid::new(1.0, 10, 3).unwrap();
    let paths = simulate(&Model::Heston(spec), &grid, 2000, 6).unwrap();
    let mut negative = 0;
    for p in 0..paths.n_paths {
        for k in 0..=grid.total_steps() {
            let s = paths.state(p, k);
            assert!(s[0].is_finite() && s[0] > 0.0);
            assert!(s[1].is_finite());
            negative += usize::from(s[1] < 0.0);
        }
    }
    assert!(negative > 0, "a vol-of-vol this large should push the Euler variance below zero");
}

#[test]
fn block_stepping_reproduces_stored_paths() {
    let grid = TimeGrid::new(1.0, 3, 4).unwrap();
    let model = Model::Heston(heston(-0.3));
    let paths = simulate(&model, &grid, 50, 7).unwrap();
    let mut blk = PathBlock::new(&model, &grid, 7, 20, 10).unwrap();
    let mut dw = vec![0.0; 10 * 2];
    for k in 1..=grid.total_steps() {
        blk.advance(&mut dw);
        for i in 0..10 {
            assert_eq!(blk.state(i), paths.state(20 + i, k));
            assert_eq!(&dw[i * 2..i * 2 + 2], paths.increment(20 + i, k - 1));
        }
    }
}
