//! Joint regression of the continuation value and the martingale increment.
//!
//! For a sample with inputs `x_0..x_{m-1}` (the state at the start of an
//! exercise interval and at its substeps) and Brownian increments
//! `dW_0..dW_{m-1}`, the fitted model is
//!
//! ```text
//! target ≈ Phi(x_0) + sum_k [ Psi(x_k) . dW_k + Psi2(x_k) . (dW_k^2 - h) ]
//! ```
//!
//! where the `Psi2` term is only present when the second martingale term is
//! enabled.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::mlp::{ForwardCache, Mlp};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// How the continuation value and the martingale increment functions are
/// parameterised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum NetLayout {
    /// One trunk with a multi-output head `[Phi, Psi, Psi2]`.
    Shared { hidden: Vec<usize> },
    /// Disjoint networks: `Phi` and `[Psi, Psi2]`.
    Separate {
        phi_hidden: Vec<usize>,
        psi_hidden: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    #[serde(flatten)]
    pub layout: NetLayout,
    /// Add the `Psi2 (dW^2 - h)` term.
    #[serde(default)]
    pub second_term: bool,
}

impl NetConfig {
    pub fn separate(phi_hidden: &[usize], psi_hidden: &[usize], second_term: bool) -> Self {
        NetConfig {
            layout: NetLayout::Separate {
                phi_hidden: phi_hidden.to_vec(),
                psi_hidden: psi_hidden.to_vec(),
            },
            second_term,
        }
    }

    pub fn shared(hidden: &[usize], second_term: bool) -> Self {
        NetConfig {
            layout: NetLayout::Shared {
                hidden: hidden.to_vec(),
            },
            second_term,
        }
    }

    pub fn is_separate(&self) -> bool {
        matches!(self.layout, NetLayout::Separate { .. })
    }
}

/// Everything that fixes the shape of a [`RegressionNets`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetArchitecture {
    pub d_in: usize,
    pub d_w: usize,
    pub config: NetConfig,
}

impl NetArchitecture {
    fn psi_width(&self) -> usize {
        if self.config.second_term {
            2 * self.d_w
        } else {
            self.d_w
        }
    }

    /// Layer sizes of each network, in storage order.
    pub fn layer_sizes(&self) -> Vec<Vec<usize>> {
        let with_io = |hidden: &[usize], out: usize| {
            let mut v = Vec::with_capacity(hidden.len() + 2);
            v.push(self.d_in);
            v.extend_from_slice(hidden);
            v.push(out);
            v
        };
        match &self.config.layout {
            NetLayout::Shared { hidden } => vec![with_io(hidden, 1 + self.psi_width())],
            NetLayout::Separate {
                phi_hidden,
                psi_hidden,
            } => vec![with_io(phi_hidden, 1), with_io(psi_hidden, self.psi_width())],
        }
    }

    /// Total number of trainable parameters.
    pub fn param_count(&self) -> usize {
        self.layer_sizes()
            .iter()
            .map(|s| super::mlp::param_count(s))
            .sum()
    }
}

/// Per-column standardisation of network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(d: usize) -> Self {
        Normalizer {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    /// Moments of the rows of `x`; constant columns get unit scale.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean: Vec<f64> = x.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default();
        let std = (0..x.ncols())
            .map(|j| {
                let var = x.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 1e-12 * mean[j].abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Normalizer { mean, std }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

/// Affine maps from raw network outputs to model units:
/// `Phi = shift + scale * phi_raw`, `Psi = scale / sqrt(dt) * psi_raw`,
/// `Psi2 = scale / dt * psi2_raw`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputScaling {
    pub value_shift: f64,
    pub value_scale: f64,
    pub increment_dt: f64,
}

impl OutputScaling {
    pub fn identity() -> Self {
        OutputScaling {
            value_shift: 0.0,
            value_scale: 1.0,
            increment_dt: 1.0,
        }
    }

    /// Centre and scale on a set of regression targets.
    pub fn fit(targets: ArrayView1<f64>, increment_dt: f64) -> Self {
        let n = targets.len().max(1) as f64;
        let mean = targets.sum() / n;
        let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 1e-8 { sd } else { mean.abs().max(1.0) };
        OutputScaling {
            value_shift: mean,
            value_scale: scale,
            increment_dt,
        }
    }

    fn psi_factor(&self) -> f64 {
        self.value_scale / self.increment_dt.sqrt()
    }

    fn psi2_factor(&self) -> f64 {
        self.value_scale / self.increment_dt
    }
}

/// A mini-batch of regression samples.
///
/// Sample `b` owns rows `b*m .. (b+1)*m` of `inputs` and `dw`; row `b*m` is
/// the state at the exercise date where `Phi` is evaluated.
#[derive(Clone, Debug)]
pub struct RegressionBatch {
    pub substeps: usize,
    /// Substep size `h`, used by the second martingale term.
    pub h: f64,
    pub inputs: Array2<f64>,
    pub dw: Array2<f64>,
    pub target: Array1<f64>,
}

impl RegressionBatch {
    pub fn new(n: usize, substeps: usize, d_in: usize, d_w: usize, h: f64) -> Self {
        RegressionBatch {
            substeps,
            h,
            inputs: Array2::zeros((n * substeps, d_in)),
            dw: Array2::zeros((n * substeps, d_w)),
            target: Array1::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Resize to `n` samples, keeping the other dimensions.
    pub fn resize(&mut self, n: usize) {
        if n != self.len() {
            let (d_in, d_w) = (self.inputs.ncols(), self.dw.ncols());
            *self = RegressionBatch::new(n, self.substeps, d_in, d_w, self.h);
        }
    }
}

/// Gradient of the loss, one block per network.
pub type Gradients = Vec<Vec<f64>>;

/// Continuation value and martingale increment functions for one regression.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionNets {
    pub arch: NetArchitecture,
    pub nets: Vec<Mlp>,
    pub input_norm: Normalizer,
    pub scaling: OutputScaling,
}

struct Evaluated {
    caches: Vec<ForwardCache>,
    phi: Array1<f64>,
    /// `[B*m x psi_width]` in model units.
    psi: Array2<f64>,
}

impl RegressionNets {
    /// He-initialised networks with identity normalisation.
    pub fn he_init(arch: &NetArchitecture, seed: u64) -> Result<Self> {
        if arch.d_in == 0 || arch.d_w == 0 {
            return Err(Error::config("network input and Brownian dimensions must be positive"));
        }
        let nets = arch
            .layer_sizes()
            .iter()
            .enumerate()
            .map(|(i, sizes)| Mlp::he_init(sizes, derive_seed(seed, 0, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(RegressionNets {
            arch: arch.clone(),
            nets,
            input_norm: Normalizer::identity(arch.d_in),
            scaling: OutputScaling::identity(),
        })
    }

    /// Copy of `prev` for a network of architecture `arch`.
    pub fn warm_start_from(arch: &NetArchitecture, prev: &RegressionNets) -> Result<Self> {
        if &prev.arch != arch {
            return Err(Error::shape(format!(
                "cannot warm-start {arch:?} from {:?}",
                prev.arch
            )));
        }
        Ok(prev.clone())
    }

    pub fn param_count(&self) -> usize {
        self.nets.iter().map(Mlp::n_params).sum()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.nets.iter().map(Mlp::n_params).collect()
    }

    pub fn zero_grads(&self) -> Gradients {
        self.nets.iter().map(|n| vec![0.0; n.n_params()]).collect()
    }

    fn is_shared(&self) -> bool {
        self.nets.len() == 1
    }

    fn check_batch(&self, batch: &RegressionBatch) -> Result<()> {
        let m = batch.substeps;
        if batch.inputs.ncols() != self.arch.d_in {
            return Err(Error::shape(format!(
                "regression inputs have {} columns, networks expect {}",
                batch.inputs.ncols(),
                self.arch.d_in
            )));
        }
        if batch.dw.ncols() != self.arch.d_w {
            return Err(Error::shape(format!(
                "Brownian increments have width {}, Psi has {}",
                batch.dw.ncols(),
                self.arch.d_w
            )));
        }
        if m == 0 || batch.inputs.nrows() != batch.len() * m || batch.dw.nrows() != batch.len() * m {
            return Err(Error::shape("inconsistent regression batch"));
        }
        Ok(())
    }

    fn exercise_rows(x: &Array2<f64>, m: usize) -> Array2<f64> {
        if m == 1 {
            x.clone()
        } else {
            x.slice(s![..;m, ..]).to_owned()
        }
    }

    fn evaluate(&self, batch: &RegressionBatch) -> Result<Evaluated> {
        self.check_batch(batch)?;
        let m = batch.substeps;
        let xhat = self.input_norm.apply(batch.inputs.view());
        let sc = self.scaling;
        let pw = self.arch.psi_width();
        let mut caches: Vec<ForwardCache> = (0..self.nets.len()).map(|_| ForwardCache::default()).collect();
        let (phi_raw, psi_raw): (Array1<f64>, Array2<f64>) = if self.is_shared() {
            self.nets[0].forward_cached(xhat, &mut caches[0])?;
            let out = caches[0].output();
            (
                out.slice(s![..;m, 0]).to_owned(),
                out.slice(s![.., 1..1 + pw]).to_owned(),
            )
        } else {
            let phi_in = Self::exercise_rows(&xhat, m);
            self.nets[0].forward_cached(phi_in, &mut caches[0])?;
            self.nets[1].forward_cached(xhat, &mut caches[1])?;
            (
                caches[0].output().column(0).to_owned(),
                caches[1].output().clone(),
            )
        };
        let phi = phi_raw.mapv(|v| sc.value_shift + sc.value_scale * v);
        let mut psi = psi_raw;
        let dw_n = self.arch.d_w;
        for mut row in psi.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= if j < dw_n { sc.psi_factor() } else { sc.psi2_factor() };
            }
        }
        Ok(Evaluated { caches, phi, psi })
    }

    /// Martingale increment contribution of every sample, summed over
    /// substeps, given `psi` in model units.
    fn increment_sum(&self, psi: &Array2<f64>, batch: &RegressionBatch) -> Array1<f64> {
        let m = batch.substeps;
        let d_w = self.arch.d_w;
        let second = self.arch.config.second_term;
        let mut out = Array1::zeros(batch.len());
        for (b, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..m {
                let r = b * m + k;
                let dw = batch.dw.row(r);
                let ps = psi.row(r);
                for j in 0..d_w {
                    acc += ps[j] * dw[j];
                    if second {
                        acc += ps[d_w + j] * (dw[j] * dw[j] - batch.h);
                    }
                }
            }
            *o = acc;
        }
        out
    }

    /// Residuals `target - Phi - sum Psi.dW [- sum Psi2.(dW^2 - h)]`.
    pub fn residuals(&self, batch: &RegressionBatch) -> Result<Array1<f64>> {
        let ev = self.evaluate(batch)?;
        let inc = self.increment_sum(&ev.psi, batch);
        Ok(&batch.target - &ev.phi - &inc)
    }

    /// Mean squared residual of the batch.
    pub fn loss(&self, batch: &RegressionBatch) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyData);
        }
        let r = self.residuals(batch)?;
        Ok(r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64)
    }

    /// Mean squared residual and its exact gradient with respect to every
    /// parameter.
    pub fn loss_and_grads(&self, batch: &RegressionBatch) -> Result<(f64, Gradients)> {
        let mut grads = self.zero_grads();
        let loss = self.accumulate_grads(batch, &mut grads)?;
        Ok((loss, grads))
    }

    /// Like [`RegressionNets::loss_and_grads`], adding into `grads`.
    pub fn accumulate_grads(&self, batch: &RegressionBatch, grads: &mut Gradients) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyData);
        }
        let ev = self.evaluate(batch)?;
        let inc = self.increment_sum(&ev.psi, batch);
        let resid = &batch.target - &ev.phi - &inc;
        let n = batch.len();
        let loss = resid.iter().map(|v| v * v).sum::<f64>() / n as f64;

        let m = batch.substeps;
        let sc = self.scaling;
        let d_w = self.arch.d_w;
        let pw = self.arch.psi_width();
        // dL/dr_b = 2 r_b / n and every fitted term enters with a minus sign
        let g: Array1<f64> = resid.mapv(|r| -2.0 * r / n as f64);
        let d_phi_raw = g.mapv(|v| v * sc.value_scale);
        let mut d_psi_raw = Array2::zeros((n * m, pw));
        for b in 0..n {
            for k in 0..m {
                let r = b * m + k;
                let dw = batch.dw.row(r);
                let mut row = d_psi_raw.row_mut(r);
                for j in 0..d_w {
                    row[j] = g[b] * sc.psi_factor() * dw[j];
                    if pw > d_w {
                        row[d_w + j] = g[b] * sc.psi2_factor() * (dw[j] * dw[j] - batch.h);
                    }
                }
            }
        }
        if self.is_shared() {
            let mut d_out = Array2::zeros((n * m, 1 + pw));
            d_out.slice_mut(s![.., 1..]).assign(&d_psi_raw);
            for b in 0..n {
                d_out[[b * m, 0]] = d_phi_raw[b];
            }
            self.nets[0].backward(&ev.caches[0], d_out, &mut grads[0]);
        } else {
            let d_phi = d_phi_raw.insert_axis(Axis(1));
            self.nets[0].backward(&ev.caches[0], d_phi, &mut grads[0]);
            self.nets[1].backward(&ev.caches[1], d_psi_raw, &mut grads[1]);
        }
        Ok(loss)
    }

    /// Continuation values `Phi` at raw inputs `[B x d_in]`.
    pub fn continuation(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        let xhat = self.input_norm.apply(inputs);
        let out = self.nets[0].forward(xhat.view())?;
        let sc = self.scaling;
        Ok(out.column(0).mapv(|v| sc.value_shift + sc.value_scale * v))
    }

    /// `[B x psi_width]` martingale coefficients at raw inputs, in model
    /// units: `Psi` in the first `d_w` columns, then `Psi2` if enabled.
    pub fn increment_coefficients(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let xhat = self.input_norm.apply(inputs);
        let pw = self.arch.psi_width();
        let raw = if self.is_shared() {
            self.nets[0].forward(xhat.view())?.slice(s![.., 1..1 + pw]).to_owned()
        } else {
            self.nets[1].forward(xhat.view())?
        };
        let sc = self.scaling;
        let d_w = self.arch.d_w;
        let mut psi = raw;
        for mut row in psi.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= if j < d_w { sc.psi_factor() } else { sc.psi2_factor() };
            }
        }
        Ok(psi)
    }

    /// Martingale increment over one interval for `B` samples: `inputs` and
    /// `dw` hold `B*m` sample-major rows (see [`RegressionBatch`]).
    pub fn increments(
        &self,
        inputs: ArrayView2<f64>,
        dw: ArrayView2<f64>,
        substeps: usize,
        h: f64,
    ) -> Result<Array1<f64>> {
        if dw.ncols() != self.arch.d_w || dw.nrows() != inputs.nrows() {
            return Err(Error::shape(format!(
                "Brownian increments [{} x {}] do not match inputs [{} x _] / Psi width {}",
                dw.nrows(),
                dw.ncols(),
                inputs.nrows(),
                self.arch.d_w
            )));
        }
        let psi = self.increment_coefficients(inputs)?;
        Ok(increment_terms(&psi, dw, substeps, h, self.arch.d_w, self.arch.config.second_term))
    }
}

/// `sum_k Psi.dW (+ Psi2.(dW^2 - h))` per sample for precomputed
/// coefficients.
pub fn increment_terms(
    psi: &Array2<f64>,
    dw: ArrayView2<f64>,
    substeps: usize,
    h: f64,
    d_w: usize,
    second: bool,
) -> Array1<f64> {
    let n = dw.nrows() / substeps;
    Array1::from_shape_fn(n, |b| {
        let mut acc = 0.0;
        for k in 0..substeps {
            let r = b * substeps + k;
            for j in 0..d_w {
                let w = dw[[r, j]];
                acc += psi[[r, j]] * w;
                if second {
                    acc += psi[[r, d_w + j]] * (w * w - h);
                }
            }
        }
        acc
    })
}
