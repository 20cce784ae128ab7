//! Fully connected ReLU network with an identity output layer.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Parameters of one feedforward network.
///
/// All weights and biases live in one flat vector: for each layer the
/// `n_in x n_out` row-major weight matrix followed by the `n_out` bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Default)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[l]` the output of layer `l`.
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("forward pass ran")
    }
}

/// Number of free parameters of a network with the given layer sizes.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::config(format!(
                "network needs at least an input and an output layer of positive width, got {layer_sizes:?}"
            )));
        }
        let mut offsets = Vec::with_capacity(layer_sizes.len() - 1);
        let mut off = 0;
        for w in layer_sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            params: vec![0.0; off],
            offsets,
        })
    }

    /// He-normal weights `N(0, 2 / n_in)`, zero biases.
    pub fn he_init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        let mut rng = seeded(seed);
        for l in 0..net.n_layers() {
            let n_in = net.layer_sizes[l];
            let std = (2.0 / n_in as f64).sqrt();
            let off = net.offsets[l];
            for w in &mut net.params[off..off + n_in * net.layer_sizes[l + 1]] {
                let z: f64 = rng.sample(StandardNormal);
                *w = std * z;
            }
        }
        Ok(net)
    }

    /// Copy of `prev`, for warm-starting the next regression.
    pub fn warm_start_from(prev: &Mlp) -> Mlp {
        prev.clone()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Number of affine layers.
    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let off = self.offsets[l];
        ArrayView2::from_shape((n_in, n_out), &self.params[off..off + n_in * n_out]).unwrap()
    }

    pub fn weight_mut(&mut self, l: usize) -> ArrayViewMut2<'_, f64> {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let off = self.offsets[l];
        ArrayViewMut2::from_shape((n_in, n_out), &mut self.params[off..off + n_in * n_out])
            .unwrap()
    }

    pub fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let off = self.offsets[l] + n_in * n_out;
        ArrayView1::from(&self.params[off..off + n_out])
    }

    pub fn bias_mut(&mut self, l: usize) -> ArrayViewMut1<'_, f64> {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let off = self.offsets[l] + n_in * n_out;
        ArrayViewMut1::from(&mut self.params[off..off + n_out])
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.n_inputs() {
            return Err(Error::shape(format!(
                "network expects {} inputs, got {}",
                self.n_inputs(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn affine(&self, l: usize, input: &ArrayView2<f64>, out: &mut Array2<f64>) {
        let b = self.bias(l);
        for mut row in out.rows_mut() {
            row.assign(&b);
        }
        general_mat_mul(1.0, input, &self.weight(l), 1.0, out);
        if l + 1 < self.n_layers() {
            out.mapv_inplace(|v| v.max(0.0));
        }
    }

    /// `[batch x n_in] -> [batch x n_out]`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut cur = x.to_owned();
        for l in 0..self.n_layers() {
            let mut out = Array2::zeros((x.nrows(), self.layer_sizes[l + 1]));
            self.affine(l, &cur.view(), &mut out);
            cur = out;
        }
        Ok(cur)
    }

    /// Forward pass that keeps every activation for [`Mlp::backward`].
    pub fn forward_cached(&self, x: Array2<f64>, cache: &mut ForwardCache) -> Result<()> {
        self.check_input(&x.view())?;
        let batch = x.nrows();
        cache.activations.clear();
        cache.activations.push(x);
        for l in 0..self.n_layers() {
            let mut out = Array2::zeros((batch, self.layer_sizes[l + 1]));
            self.affine(l, &cache.activations[l].view(), &mut out);
            cache.activations.push(out);
        }
        Ok(())
    }

    /// Backpropagate `d_out = dL/d(output)` and add the parameter gradient
    /// into `grad` (same layout as [`Mlp::params`]).
    ///
    /// The ReLU derivative at exactly zero is taken as zero.
    pub fn backward(&self, cache: &ForwardCache, d_out: Array2<f64>, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut delta = d_out;
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = self.offsets[l];
            let input = &cache.activations[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                let mut gw = ArrayViewMut2::from_shape((n_in, n_out), gw).unwrap();
                general_mat_mul(1.0, &input.t(), &delta, 1.0, &mut gw);
                let mut gb = ArrayViewMut1::from(gb);
                gb += &delta.sum_axis(Axis(0));
            }
            if l > 0 {
                let mut prev = Array2::zeros((delta.nrows(), n_in));
                general_mat_mul(1.0, &delta, &self.weight(l).t(), 0.0, &mut prev);
                prev.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
    }
}
