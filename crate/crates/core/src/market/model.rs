use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Correlated geometric Brownian motions
/// `dS^i = (r - delta^i) S^i dt + sigma^i S^i dW^i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbmSpec {
    pub s0: Vec<f64>,
    pub r: f64,
    pub delta: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Row-major `d x d` correlation matrix; `None` means identity.
    #[serde(default)]
    pub corr: Option<Vec<Vec<f64>>>,
}

impl GbmSpec {
    /// Single asset without dividends.
    pub fn single(s0: f64, r: f64, sigma: f64) -> Self {
        GbmSpec {
            s0: vec![s0],
            r,
            delta: vec![0.0],
            sigma: vec![sigma],
            corr: None,
        }
    }

    /// `d` independent, identically parameterised assets.
    pub fn iid(d: usize, s0: f64, r: f64, delta: f64, sigma: f64) -> Self {
        GbmSpec {
            s0: vec![s0; d],
            r,
            delta: vec![delta; d],
            sigma: vec![sigma; d],
            corr: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.s0.len()
    }

    /// Lower Cholesky factor of the correlation matrix (row-major `d x d`).
    /// Positive semi-definite matrices are accepted; zero pivots produce
    /// zero columns.
    pub fn cholesky(&self) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut corr = vec![0.0; d * d];
        match &self.corr {
            None => (0..d).for_each(|i| corr[i * d + i] = 1.0),
            Some(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::config(format!("model.corr must be {d}x{d}")));
                }
                for i in 0..d {
                    for j in 0..d {
                        corr[i * d + j] = rows[i][j];
                    }
                }
            }
        }
        cholesky_psd(&corr, d)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::config("model.s0 must hold at least one asset"));
        }
        if self.delta.len() != d || self.sigma.len() != d {
            return Err(Error::config(format!(
                "model: s0, delta and sigma must all have length {d}"
            )));
        }
        if self.s0.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("model.s0 must be positive"));
        }
        if self.sigma.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::config("model.sigma must be non-negative"));
        }
        self.cholesky().map(|_| ())
    }
}

/// Heston stochastic volatility model
/// `dS = r S dt + sqrt(V) S dW_S`, `dV = lambda (sigma^2 - V) dt + xi sqrt(V) dW_V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HestonSpec {
    pub s0: f64,
    pub v0: f64,
    pub r: f64,
    pub lambda: f64,
    /// Long-term volatility; the variance reverts to `sigma_lt^2`.
    pub sigma_lt: f64,
    pub xi: f64,
    pub rho: f64,
}

impl HestonSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0) {
            return Err(Error::config("model.s0 must be positive"));
        }
        if !(self.v0 >= 0.0) {
            return Err(Error::config("model.v0 must be non-negative"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config("model.lambda must be non-negative"));
        }
        if !(self.xi >= 0.0) {
            return Err(Error::config("model.xi must be non-negative"));
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::config("model.rho must lie in [-1, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Gbm(GbmSpec),
    Heston(HestonSpec),
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Gbm(s) => s.validate(),
            Model::Heston(s) => s.validate(),
        }
    }

    pub fn rate(&self) -> f64 {
        match self {
            Model::Gbm(s) => s.r,
            Model::Heston(s) => s.r,
        }
    }

    /// Number of traded asset prices at the front of the state vector.
    pub fn d_assets(&self) -> usize {
        match self {
            Model::Gbm(s) => s.dim(),
            Model::Heston(_) => 1,
        }
    }

    /// State width: prices, plus the variance for Heston.
    pub fn d_state(&self) -> usize {
        match self {
            Model::Gbm(s) => s.dim(),
            Model::Heston(_) => 2,
        }
    }

    /// Dimension of the driving Brownian motion.
    pub fn d_w(&self) -> usize {
        match self {
            Model::Gbm(s) => s.dim(),
            Model::Heston(_) => 2,
        }
    }

    pub fn initial_state(&self) -> Vec<f64> {
        match self {
            Model::Gbm(s) => s.s0.clone(),
            Model::Heston(s) => vec![s.s0, s.v0],
        }
    }

    /// Precompute the one-step transition for step size `h`.
    pub fn stepper(&self, h: f64) -> Result<Stepper> {
        self.validate()?;
        Ok(match self {
            Model::Gbm(s) => {
                let d = s.dim();
                let drift = (0..d)
                    .map(|i| (s.r - s.delta[i] - 0.5 * s.sigma[i] * s.sigma[i]) * h)
                    .collect();
                Stepper::Gbm {
                    d,
                    sqrt_h: h.sqrt(),
                    chol: s.cholesky()?,
                    drift,
                    sigma: s.sigma.clone(),
                }
            }
            Model::Heston(s) => Stepper::Heston {
                h,
                sqrt_h: h.sqrt(),
                r: s.r,
                lambda: s.lambda,
                theta: s.sigma_lt * s.sigma_lt,
                xi: s.xi,
                rho: s.rho,
                rho_bar: (1.0 - s.rho * s.rho).max(0.0).sqrt(),
            },
        })
    }
}

/// One-step transition of a model on a fixed step size. `step` is a pure
/// function of the current state and the Brownian increment, which is what
/// makes stored paths replayable.
#[derive(Clone, Debug)]
pub enum Stepper {
    Gbm {
        d: usize,
        sqrt_h: f64,
        chol: Vec<f64>,
        drift: Vec<f64>,
        sigma: Vec<f64>,
    },
    Heston {
        h: f64,
        sqrt_h: f64,
        r: f64,
        lambda: f64,
        theta: f64,
        xi: f64,
        rho: f64,
        rho_bar: f64,
    },
}

impl Stepper {
    pub fn d_w(&self) -> usize {
        match self {
            Stepper::Gbm { d, .. } => *d,
            Stepper::Heston { .. } => 2,
        }
    }

    /// Draw the correlated Brownian increments of one step into `dw`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, dw: &mut [f64]) {
        match self {
            Stepper::Gbm { d, sqrt_h, chol, .. } => {
                let d = *d;
                let mut z = [0.0f64; 16];
                let mut zv;
                let z: &mut [f64] = if d <= 16 {
                    &mut z[..d]
                } else {
                    zv = vec![0.0; d];
                    &mut zv
                };
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                for i in 0..d {
                    let mut acc = 0.0;
                    for j in 0..=i {
                        acc += chol[i * d + j] * z[j];
                    }
                    dw[i] = sqrt_h * acc;
                }
            }
            Stepper::Heston {
                sqrt_h,
                rho,
                rho_bar,
                ..
            } => {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                dw[0] = sqrt_h * z1;
                dw[1] = sqrt_h * (rho * z1 + rho_bar * z2);
            }
        }
    }

    /// Advance `state` by one step driven by `dw`, writing into `next`.
    pub fn step(&self, state: &[f64], dw: &[f64], next: &mut [f64]) {
        match self {
            Stepper::Gbm {
                d, drift, sigma, ..
            } => {
                for i in 0..*d {
                    next[i] = state[i] * (drift[i] + sigma[i] * dw[i]).exp();
                }
            }
            Stepper::Heston {
                h,
                r,
                lambda,
                theta,
                xi,
                ..
            } => {
                // full truncation: V+ in drift, diffusion and the price volatility
                let v_plus = state[1].max(0.0);
                let vol = v_plus.sqrt();
                next[0] = state[0] * ((r - 0.5 * v_plus) * h + vol * dw[0]).exp();
                next[1] = state[1] + lambda * (theta - v_plus) * h + xi * vol * dw[1];
            }
        }
    }
}

/// Cholesky factorisation of a symmetric positive semi-definite matrix with
/// unit diagonal.
pub(crate) fn cholesky_psd(a: &[f64], d: usize) -> Result<Vec<f64>> {
    const TOL: f64 = 1e-10;
    for i in 0..d {
        if (a[i * d + i] - 1.0).abs() > TOL {
            return Err(Error::config("model.corr must have a unit diagonal"));
        }
        for j in 0..i {
            if (a[i * d + j] - a[j * d + i]).abs() > TOL {
                return Err(Error::config("model.corr must be symmetric"));
            }
        }
    }
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if diag < -TOL {
            return Err(Error::config(
                "model.corr is not positive semi-definite",
            ));
        }
        let pivot = diag.max(0.0).sqrt();
        l[j * d + j] = pivot;
        for i in (j + 1)..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if pivot > TOL {
                l[i * d + j] = s / pivot;
            } else if s.abs() > 1e-8 {
                return Err(Error::config(
                    "model.corr is not positive semi-definite",
                ));
            }
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_identity_and_correlated() {
        let l = cholesky_psd(&[1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(l, vec![1.0, 0.0, 0.0, 1.0]);
        let l = cholesky_psd(&[1.0, 0.5, 0.5, 1.0], 2).unwrap();
        assert!((l[2] - 0.5).abs() < 1e-15);
        assert!((l[3] - 0.75f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_accepts_singular_psd() {
        let l = cholesky_psd(&[1.0, 1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(l, vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(cholesky_psd(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
        assert!(cholesky_psd(&[1.0, 0.3, 0.2, 1.0], 2).is_err());
        assert!(cholesky_psd(&[2.0, 0.0, 0.0, 1.0], 2).is_err());
    }

    #[test]
    fn validation() {
        let mut h = HestonSpec {
            s0: 100.0,
            v0: 0.01,
            r: 0.1,
            lambda: 2.0,
            sigma_lt: 0.1,
            xi: 0.2,
            rho: -0.3,
        };
        assert!(h.validate().is_ok());
        h.rho = -1.5;
        assert!(h.validate().is_err());
        let mut g = GbmSpec::single(36.0, 0.06, 0.2);
        assert!(g.validate().is_ok());
        g.corr = Some(vec![vec![1.0]]);
        assert!(g.validate().is_ok());
        g.delta = vec![];
        assert!(g.validate().is_err());
    }
}
