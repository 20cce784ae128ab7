//! Trained stopping policies and the lower/upper bound recursions.
//!
//! With `disc = exp(-r dt)` and `cv_i` the martingale increment accumulated
//! over exercise interval `i`, the two processes are
//!
//! ```text
//! Y_n = X_n = f_n
//! Y_i = f_i                          if f_i >= Phi_i and f_i > 0
//!     = disc * Y_{i+1} - cv_i        otherwise
//! X_i = max(f_i, disc * X_{i+1} - cv_i)
//! ```
//!
//! and at `t_0` no exercise is allowed.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::market::{discount, Model, PathBatch, Payoff, TimeGrid};
use crate::nn::persist::{read_nets, write_nets};
use crate::nn::{increment_terms, RegressionNets};
use crate::samples::{input_width, interval_rows, step_inputs, time_feature};

/// Paths per chunk when evaluating networks over a path batch.
pub(crate) const PATH_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// One network pair per exercise date `t_0..t_{n-1}`.
    PerDate,
    /// One network pair taking `(t / T, state)`.
    Global,
}

/// When a path may stop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExerciseRule {
    /// First date with `f >= Phi` and `f > 0`, else maturity.
    #[default]
    Policy,
    /// Always at maturity (European limit).
    MaturityOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub kind: PolicyKind,
    pub grid: TimeGrid,
    pub payoff: Payoff,
    pub rate: f64,
    pub nets: Vec<RegressionNets>,
}

/// Stopping rule at an exercise date.
#[inline]
pub fn exercises(f: f64, phi: f64) -> bool {
    f >= phi && f > 0.0
}

/// Exercise branch of the lower-bound recursion.
pub fn y_update(
    y_next: ArrayView1<f64>,
    phi: ArrayView1<f64>,
    cv: ArrayView1<f64>,
    f_now: ArrayView1<f64>,
    disc: f64,
) -> Array1<f64> {
    Array1::from_shape_fn(y_next.len(), |p| {
        if exercises(f_now[p], phi[p]) {
            f_now[p]
        } else {
            disc * y_next[p] - cv[p]
        }
    })
}

/// Dual recursion for the upper bound.
pub fn x_update(x_next: ArrayView1<f64>, cv: ArrayView1<f64>, f_now: ArrayView1<f64>, disc: f64) -> Array1<f64> {
    Array1::from_shape_fn(x_next.len(), |p| f_now[p].max(disc * x_next[p] - cv[p]))
}

/// Per-date values of the two recursions on a path batch.
#[derive(Clone, Debug)]
pub struct Recursion {
    /// `y[i]` for `i = 0..=n`.
    pub y: Vec<Array1<f64>>,
    pub x: Option<Vec<Array1<f64>>>,
    /// Exercise date of every path in `1..=n`.
    pub tau: Vec<usize>,
}

impl Policy {
    pub fn n_exercise(&self) -> usize {
        self.grid.n_exercise
    }

    pub fn time_input(&self) -> bool {
        self.kind == PolicyKind::Global
    }

    /// Networks used on exercise interval `i`.
    pub fn nets_for(&self, i: usize) -> &RegressionNets {
        match self.kind {
            PolicyKind::PerDate => &self.nets[i],
            PolicyKind::Global => &self.nets[0],
        }
    }

    /// Check the policy against a model.
    pub fn check_model(&self, model: &Model) -> Result<()> {
        let expected_nets = match self.kind {
            PolicyKind::PerDate => self.grid.n_exercise,
            PolicyKind::Global => 1,
        };
        if self.nets.len() != expected_nets {
            return Err(Error::shape(format!(
                "policy has {} networks, expected {expected_nets}",
                self.nets.len()
            )));
        }
        self.payoff.check_dim(model.d_assets())?;
        let d_in = input_width(model.d_state(), self.time_input());
        for n in &self.nets {
            if n.arch.d_in != d_in || n.arch.d_w != model.d_w() {
                return Err(Error::shape(format!(
                    "policy networks take {} inputs and {} increments, model needs {d_in} and {}",
                    n.arch.d_in,
                    n.arch.d_w,
                    model.d_w()
                )));
            }
        }
        Ok(())
    }

    pub fn check_paths(&self, paths: &PathBatch) -> Result<()> {
        if paths.n_steps != self.grid.total_steps() {
            return Err(Error::shape(format!(
                "paths have {} steps, grid has {}",
                paths.n_steps,
                self.grid.total_steps()
            )));
        }
        Ok(())
    }

    /// Network inputs for raw states at a simulation step.
    pub fn inputs_at_step(&self, step: usize, states: ndarray::ArrayView2<f64>) -> Array2<f64> {
        if !self.time_input() {
            return states.to_owned();
        }
        let t = time_feature(&self.grid, step);
        let mut out = Array2::zeros((states.nrows(), states.ncols() + 1));
        out.column_mut(0).fill(t);
        out.slice_mut(ndarray::s![.., 1..]).assign(&states);
        out
    }

    /// `Phi` at exercise date `i` on every path of the batch.
    pub fn date_continuation(&self, paths: &PathBatch, i: usize) -> Result<Array1<f64>> {
        let nets = self.nets_for(i.min(self.n_exercise() - 1));
        date_continuation(nets, &self.grid, self.time_input(), paths, i)
    }

    /// Martingale increment `cv_i` of exercise interval `i` on every path.
    pub fn interval_increments(&self, paths: &PathBatch, i: usize) -> Result<Array1<f64>> {
        interval_increments(self.nets_for(i), &self.grid, self.time_input(), paths, i)
    }

    /// Payoff at exercise date `i` on every path.
    pub fn date_payoff(&self, paths: &PathBatch, i: usize) -> Array1<f64> {
        date_payoff(&self.payoff, &self.grid, paths, i)
    }

    /// Run the lower (and optionally upper) bound recursion backward over a
    /// path batch with frozen networks.
    pub fn backward_recursion(&self, paths: &PathBatch, rule: ExerciseRule, with_x: bool) -> Result<Recursion> {
        self.check_paths(paths)?;
        let n = self.n_exercise();
        let disc = discount(self.rate, self.grid.exercise_dt());
        let f_n = self.date_payoff(paths, n);
        let mut y = vec![Array1::zeros(0); n + 1];
        let mut x = with_x.then(|| vec![Array1::zeros(0); n + 1]);
        let mut tau = vec![n; paths.n_paths];
        y[n] = f_n.clone();
        if let Some(x) = x.as_mut() {
            x[n] = f_n;
        }
        for i in (0..n).rev() {
            let cv = self.interval_increments(paths, i)?;
            let rolled = &y[i + 1] * disc - &cv;
            y[i] = if i == 0 || rule == ExerciseRule::MaturityOnly {
                rolled
            } else {
                let f = self.date_payoff(paths, i);
                let phi = self.date_continuation(paths, i)?;
                for (p, t) in tau.iter_mut().enumerate() {
                    if exercises(f[p], phi[p]) {
                        *t = i;
                    }
                }
                y_update(y[i + 1].view(), phi.view(), cv.view(), f.view(), disc)
            };
            if let Some(x) = x.as_mut() {
                x[i] = if i == 0 {
                    &x[1] * disc - &cv
                } else {
                    let f = self.date_payoff(paths, i);
                    x_update(x[i + 1].view(), cv.view(), f.view(), disc)
                };
            }
        }
        Ok(Recursion { y, x, tau })
    }

    /// Total number of trained parameters over all networks.
    pub fn param_count(&self) -> usize {
        self.nets.iter().map(RegressionNets::param_count).sum()
    }
}

/// `Phi` of one network pair at exercise date `i` on every path.
pub fn date_continuation(
    nets: &RegressionNets,
    grid: &TimeGrid,
    time_input: bool,
    paths: &PathBatch,
    i: usize,
) -> Result<Array1<f64>> {
    let step = grid.exercise_step(i);
    par_paths(paths.n_paths, |r| {
        nets.continuation(step_inputs(paths, grid, step, time_input, r).view())
    })
}

/// Martingale increment of one network pair over exercise interval `i`.
pub fn interval_increments(
    nets: &RegressionNets,
    grid: &TimeGrid,
    time_input: bool,
    paths: &PathBatch,
    i: usize,
) -> Result<Array1<f64>> {
    let (m, h) = (grid.substeps, grid.step_size());
    par_paths(paths.n_paths, |r| {
        let (x, w) = interval_rows(paths, grid, i, time_input, r);
        let psi = nets.increment_coefficients(x.view())?;
        Ok(increment_terms(&psi, w.view(), m, h, nets.arch.d_w, nets.arch.config.second_term))
    })
}

pub fn date_payoff(payoff: &Payoff, grid: &TimeGrid, paths: &PathBatch, i: usize) -> Array1<f64> {
    let step = grid.exercise_step(i);
    Array1::from_shape_fn(paths.n_paths, |p| payoff.value(paths.assets(p, step)))
}

/// Evaluate `f` over path chunks in parallel and concatenate.
pub(crate) fn par_paths<F>(n_paths: usize, f: F) -> Result<Array1<f64>>
where
    F: Fn(std::ops::Range<usize>) -> Result<Array1<f64>> + Sync,
{
    let starts: Vec<usize> = (0..n_paths).step_by(PATH_CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&a| f(a..(a + PATH_CHUNK).min(n_paths)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(n_paths);
    for p in parts {
        out.extend(p);
    }
    Ok(Array1::from(out))
}

/// Stable fingerprint of a model specification.
pub fn model_hash(model: &Model) -> Result<String> {
    let json = serde_json::to_vec(model)?;
    let digest = Sha256::digest(&json);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: PolicyKind,
    pub grid: TimeGrid,
    pub payoff: Payoff,
    pub rate: f64,
    pub model_hash: String,
    /// Active algorithm variations (1-6).
    pub variations: Vec<u8>,
    pub files: Vec<String>,
}

impl Policy {
    /// Write one network file per regression plus `manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>, model: &Model, variations: &[u8]) -> Result<Manifest> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let files: Vec<String> = match self.kind {
            PolicyKind::PerDate => (0..self.nets.len()).map(|i| format!("date_{i:03}.nets")).collect(),
            PolicyKind::Global => vec!["global.nets".to_string()],
        };
        for (net, f) in self.nets.iter().zip(&files) {
            write_nets(net, dir.join(f))?;
        }
        let manifest = Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            kind: self.kind,
            grid: self.grid,
            payoff: self.payoff,
            rate: self.rate,
            model_hash: model_hash(model)?,
            variations: variations.to_vec(),
            files,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Policy, Manifest)> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported policy manifest version {}",
                manifest.schema_version
            )));
        }
        let mut nets: Vec<RegressionNets> = Vec::with_capacity(manifest.files.len());
        for f in &manifest.files {
            let expected = nets.first().map(|n| n.arch.clone());
            nets.push(read_nets(dir.join(f), expected.as_ref())?);
        }
        let policy = Policy {
            kind: manifest.kind,
            grid: manifest.grid,
            payoff: manifest.payoff,
            rate: manifest.rate,
            nets,
        };
        Ok((policy, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hand_examples() {
        let f = array![5.0, 0.0, 2.0];
        let phi = array![4.0, 1.0, 3.0];
        // disc * next - cv = (4.2, 1.0, 2.5)
        let next = array![4.2, 1.0, 2.5];
        let cv = array![0.0, 0.0, 0.0];
        let y = y_update(next.view(), phi.view(), cv.view(), f.view(), 1.0);
        assert_eq!(y, array![5.0, 1.0, 2.5]);
        let x = x_update(next.view(), cv.view(), f.view(), 1.0);
        assert_eq!(x, array![5.0, 1.0, 2.5]);
    }

    #[test]
    fn never_and_always_exercise() {
        let f = array![1.0, 2.0];
        let next = array![3.0, 0.5];
        let cv = array![0.25, -0.25];
        let inf = array![f64::INFINITY, f64::INFINITY];
        let y = y_update(next.view(), inf.view(), cv.view(), f.view(), 0.9);
        assert_eq!(y, array![0.9 * 3.0 - 0.25, 0.9 * 0.5 + 0.25]);
        let ninf = array![f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert_eq!(y_update(next.view(), ninf.view(), cv.view(), f.view(), 0.9), f);
    }

    #[test]
    fn exercise_needs_positive_payoff() {
        let f = array![0.0];
        let phi = array![-0.1];
        let y = y_update(array![2.0].view(), phi.view(), array![0.0].view(), f.view(), 1.0);
        assert_eq!(y, array![2.0]);
    }

    #[test]
    fn x_without_martingale_is_running_max() {
        let fs = [array![1.0, 4.0], array![3.0, 1.0], array![2.0, 2.0]];
        let zero = array![0.0, 0.0];
        let mut x = fs[2].clone();
        for f in fs[..2].iter().rev() {
            x = x_update(x.view(), zero.view(), f.view(), 1.0);
        }
        assert_eq!(x, array![3.0, 4.0]);
    }
}
