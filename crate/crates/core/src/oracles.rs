//! Independent reference prices: closed-form Black–Scholes, a CRR tree for
//! Bermudan puts and a Fourier pricer for Heston European puts.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::market::HestonSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    Binomial,
    ClosedFormEuropean,
    HestonIntegration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub price: f64,
    pub method: OracleMethod,
    /// Resolution parameters used.
    pub params: BTreeMap<String, f64>,
}

fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn bs_european_put(s0: f64, k: f64, r: f64, sigma: f64, t: f64) -> f64 {
    if sigma <= 0.0 || t <= 0.0 {
        return (k * (-r * t).exp() - s0).max(0.0);
    }
    let sq = sigma * t.sqrt();
    let d1 = ((s0 / k).ln() + (r + 0.5 * sigma * sigma) * t) / sq;
    let d2 = d1 - sq;
    k * (-r * t).exp() * std_normal_cdf(-d2) - s0 * std_normal_cdf(-d1)
}

pub fn bs_european_put_result(s0: f64, k: f64, r: f64, sigma: f64, t: f64) -> OracleResult {
    OracleResult {
        price: bs_european_put(s0, k, r, sigma, t),
        method: OracleMethod::ClosedFormEuropean,
        params: BTreeMap::new(),
    }
}

/// Bermudan put on a Cox–Ross–Rubinstein tree with exercise allowed at
/// `exercise_dates` equally spaced dates (the last one is maturity).
pub fn binomial_bermudan_put(
    s0: f64,
    k: f64,
    r: f64,
    sigma: f64,
    t: f64,
    exercise_dates: usize,
    tree_steps: usize,
) -> Result<OracleResult> {
    if exercise_dates == 0 || tree_steps == 0 || !tree_steps.is_multiple_of(exercise_dates) {
        return Err(Error::Config(format!(
            "tree steps ({tree_steps}) must be a positive multiple of the exercise dates ({exercise_dates})"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config("binomial tree needs sigma > 0".into()));
    }
    let dt = t / tree_steps as f64;
    let u = (sigma * dt.sqrt()).exp();
    let d = 1.0 / u;
    let p = ((r * dt).exp() - d) / (u - d);
    let disc = (-r * dt).exp();
    let price_at = |level: usize, j: usize| s0 * u.powi(2 * j as i32 - level as i32);
    let mut v: Vec<f64> = (0..=tree_steps).map(|j| (k - price_at(tree_steps, j)).max(0.0)).collect();
    let every = tree_steps / exercise_dates;
    for level in (0..tree_steps).rev() {
        for j in 0..=level {
            v[j] = disc * (p * v[j + 1] + (1.0 - p) * v[j]);
        }
        if level > 0 && level % every == 0 {
            for (j, vj) in v.iter_mut().enumerate().take(level + 1) {
                *vj = vj.max(k - price_at(level, j));
            }
        }
    }
    let params = BTreeMap::from([
        ("tree_steps".to_string(), tree_steps as f64),
        ("exercise_dates".to_string(), exercise_dates as f64),
    ]);
    Ok(OracleResult {
        price: v[0],
        method: OracleMethod::Binomial,
        params,
    })
}

/// Characteristic function of `ln(S_T / S_0) - r T` under Heston, in the
/// formulation that avoids the branch-cut discontinuity of the complex log.
fn heston_cf(spec: &HestonSpec, t: f64, u: Complex64) -> Complex64 {
    let i = Complex64::i();
    let (kappa, theta, xi, rho) = (spec.lambda, spec.sigma_lt * spec.sigma_lt, spec.xi, spec.rho);
    let b = kappa - rho * xi * i * u;
    let d = (b * b + xi * xi * (i * u + u * u)).sqrt();
    let g = (b - d) / (b + d);
    let e = (-d * t).exp();
    let c = kappa * theta / (xi * xi) * ((b - d) * t - 2.0 * ((1.0 - g * e) / (1.0 - g)).ln());
    let dd = (b - d) / (xi * xi) * (1.0 - e) / (1.0 - g * e);
    (c + dd * spec.v0).exp()
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn composite_gauss<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize, rule: &[(f64, f64)]) -> f64 {
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * w, a + (k + 1) as f64 * w);
            let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            rule.iter().map(|&(x, wt)| wt * f(c + r * x)).sum::<f64>() * r
        })
        .sum()
}

/// Integral over `[start, inf)` of an integrand decaying to zero: the
/// domain is truncated where the integrand is negligible and the panel
/// count doubled until two successive estimates agree.
fn integrate_to_infinity<F: Fn(f64) -> f64>(f: &F, start: f64, tol: f64) -> Result<(f64, f64)> {
    let mut upper = 50.0;
    while f(upper).abs().max(f(0.5 * upper).abs() * 1e-3) > 1e-16 {
        upper *= 2.0;
        if upper > 1e6 {
            return Err(Error::Integration("integrand tail does not decay".into()));
        }
    }
    let rule = gauss_legendre(16);
    let mut panels = 16;
    let mut prev = composite_gauss(f, start, upper, panels, &rule);
    while panels < 1 << 16 {
        panels *= 2;
        let next = composite_gauss(f, start, upper, panels, &rule);
        if (next - prev).abs() < tol {
            return Ok((next, upper));
        }
        prev = next;
    }
    Err(Error::Integration(format!("no convergence up to {panels} panels")))
}

/// European put under Heston by a single Fourier integral of the
/// characteristic function, integrated adaptively until the truncated tail
/// is below tolerance.
pub fn heston_european_put(spec: &HestonSpec, k: f64, t: f64) -> Result<OracleResult> {
    spec.validate()?;
    if spec.xi <= 0.0 {
        return Err(Error::Config("Fourier pricer needs xi > 0".into()));
    }
    let s0 = spec.s0;
    let x = (s0 / k).ln() + spec.r * t;
    let integrand = |u: f64| {
        let z = Complex64::new(u, -0.5);
        let v = (Complex64::i() * u * x).exp() * heston_cf(spec, t, z);
        v.re / (u * u + 0.25)
    };
    let tol = 1e-9;
    let (total, upper) = integrate_to_infinity(&integrand, 0.0, tol)?;
    let call = s0 - (s0 * k).sqrt() * (-0.5 * spec.r * t).exp() / std::f64::consts::PI * total;
    let put = call - s0 + k * (-spec.r * t).exp();
    let params = BTreeMap::from([
        ("upper_limit".to_string(), upper),
        ("tolerance".to_string(), tol),
    ]);
    Ok(OracleResult {
        price: put,
        method: OracleMethod::HestonIntegration,
        params,
    })
}

/// European call under Heston from the two exercise probabilities
/// `C = S_0 P_1 - K e^{-rT} P_2`. Independent of the put pricer, so the two
/// can be checked against put-call parity.
pub fn heston_european_call(spec: &HestonSpec, k: f64, t: f64) -> Result<f64> {
    spec.validate()?;
    let i = Complex64::i();
    let drift = (spec.s0.ln() + spec.r * t) - k.ln();
    let forward_cf = |u: Complex64| (i * u * drift).exp() * heston_cf(spec, t, u);
    // the share measure shifts the argument by -i; E[e^{X}] = 1
    let p2 = |u: f64| (forward_cf(Complex64::new(u, 0.0)) / (i * u)).re;
    let norm = drift.exp();
    let p1 = |u: f64| (forward_cf(Complex64::new(u, -1.0)) / (i * u * norm)).re;
    let (i1, _) = integrate_to_infinity(&p1, 0.0, 1e-9)?;
    let (i2, _) = integrate_to_infinity(&p2, 0.0, 1e-9)?;
    let pi = std::f64::consts::PI;
    let (prob1, prob2) = (0.5 + i1 / pi, 0.5 + i2 / pi);
    Ok(spec.s0 * prob1 - k * (-spec.r * t).exp() * prob2)
}
