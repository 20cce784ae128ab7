use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayView2, ArrayView3};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::grid::TimeGrid;
use super::model::{GbmSpec, HestonSpec, Model, Stepper};
use crate::error::{Error, Result};
use crate::rng::path_rng;

/// Default cap on the memory of one materialised path batch (2 GiB).
pub const DEFAULT_MEMORY_CAP: usize = 2 << 30;

const MAGIC: &[u8; 8] = b"NNSTPATH";
const VERSION: u32 = 1;

/// Simulated paths together with the Brownian increments that drove them.
///
/// `states` is row-major `[path][step][state]` with `n_steps + 1` points per
/// path, `increments` is `[path][step][w]` with `n_steps` rows per path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    pub n_paths: usize,
    pub n_steps: usize,
    pub d_state: usize,
    pub d_assets: usize,
    pub d_w: usize,
    pub seed: u64,
    pub states: Vec<f64>,
    pub increments: Vec<f64>,
}

impl PathBatch {
    #[inline]
    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * (self.n_steps + 1) + step) * self.d_state;
        &self.states[off..off + self.d_state]
    }

    #[inline]
    pub fn assets(&self, path: usize, step: usize) -> &[f64] {
        &self.state(path, step)[..self.d_assets]
    }

    #[inline]
    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * self.n_steps + step) * self.d_w;
        &self.increments[off..off + self.d_w]
    }

    pub fn states_view(&self) -> ArrayView3<'_, f64> {
        ArrayView3::from_shape((self.n_paths, self.n_steps + 1, self.d_state), &self.states)
            .expect("consistent path batch")
    }

    pub fn increments_view(&self) -> ArrayView3<'_, f64> {
        ArrayView3::from_shape((self.n_paths, self.n_steps, self.d_w), &self.increments)
            .expect("consistent path batch")
    }

    /// `[N x d_state]` states at one step, copied.
    pub fn states_at(&self, step: usize) -> ndarray::Array2<f64> {
        self.states_view()
            .index_axis(ndarray::Axis(1), step)
            .to_owned()
    }

    /// `[N x d_w]` increments of one step, copied.
    pub fn increments_at(&self, step: usize) -> ndarray::Array2<f64> {
        self.increments_view()
            .index_axis(ndarray::Axis(1), step)
            .to_owned()
    }

    pub fn path_states(&self, path: usize) -> ArrayView2<'_, f64> {
        let len = (self.n_steps + 1) * self.d_state;
        ArrayView2::from_shape(
            (self.n_steps + 1, self.d_state),
            &self.states[path * len..(path + 1) * len],
        )
        .expect("consistent path batch")
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [
            self.n_paths as u64,
            self.n_steps as u64,
            self.d_state as u64,
            self.d_assets as u64,
            self.d_w as u64,
            self.seed,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for x in self.states.iter().chain(self.increments.iter()) {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a path batch file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported path batch version {version}")));
        }
        let mut header = [0u64; 6];
        let mut b8 = [0u8; 8];
        for h in header.iter_mut() {
            r.read_exact(&mut b8)?;
            *h = u64::from_le_bytes(b8);
        }
        let [n_paths, n_steps, d_state, d_assets, d_w, seed] = header;
        let (n_paths, n_steps, d_state, d_assets, d_w) = (
            n_paths as usize,
            n_steps as usize,
            d_state as usize,
            d_assets as usize,
            d_w as usize,
        );
        let mut read_vec = |len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut b8)?;
                out.push(f64::from_le_bytes(b8));
            }
            Ok(out)
        };
        let states = read_vec(n_paths * (n_steps + 1) * d_state)?;
        let increments = read_vec(n_paths * n_steps * d_w)?;
        Ok(PathBatch {
            n_paths,
            n_steps,
            d_state,
            d_assets,
            d_w,
            seed,
            states,
            increments,
        })
    }
}

/// Simulate `n_paths` paths of `model` on `grid` (including substeps).
pub fn simulate(model: &Model, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathBatch> {
    simulate_capped(model, grid, n_paths, seed, DEFAULT_MEMORY_CAP)
}

pub fn simulate_gbm(spec: &GbmSpec, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathBatch> {
    simulate(&Model::Gbm(spec.clone()), grid, n_paths, seed)
}

pub fn simulate_heston(
    spec: &HestonSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathBatch> {
    simulate(&Model::Heston(spec.clone()), grid, n_paths, seed)
}

/// Like [`simulate`] with an explicit memory cap in bytes.
pub fn simulate_capped(
    model: &Model,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    cap_bytes: usize,
) -> Result<PathBatch> {
    grid.validate()?;
    if n_paths == 0 {
        return Err(Error::config("number of paths must be at least 1"));
    }
    let stepper = model.stepper(grid.step_size())?;
    let n_steps = grid.total_steps();
    let (d_state, d_w) = (model.d_state(), model.d_w());
    let bytes = n_paths
        .saturating_mul((n_steps + 1) * d_state + n_steps * d_w)
        .saturating_mul(8);
    if bytes > cap_bytes {
        return Err(Error::Resource(format!(
            "{n_paths} paths x {n_steps} steps need {} MiB, above the cap of {} MiB; \
             use fresh-data training (variation 3) or forward evaluation instead",
            bytes >> 20,
            cap_bytes >> 20
        )));
    }
    let s0 = model.initial_state();
    let mut states = vec![0.0; n_paths * (n_steps + 1) * d_state];
    let mut increments = vec![0.0; n_paths * n_steps * d_w];
    states
        .par_chunks_mut((n_steps + 1) * d_state)
        .zip(increments.par_chunks_mut((n_steps * d_w).max(1)))
        .enumerate()
        .for_each(|(p, (s, w))| {
            let mut rng = path_rng(seed, p as u64);
            s[..d_state].copy_from_slice(&s0);
            for k in 0..n_steps {
                let dw = &mut w[k * d_w..(k + 1) * d_w];
                stepper.draw(&mut rng, dw);
                let (done, rest) = s.split_at_mut((k + 1) * d_state);
                stepper.step(&done[k * d_state..], dw, &mut rest[..d_state]);
            }
        });
    Ok(PathBatch {
        n_paths,
        n_steps,
        d_state,
        d_assets: model.d_assets(),
        d_w,
        seed,
        states,
        increments,
    })
}

/// A block of paths advanced one step at a time. Produces exactly the same
/// numbers as [`simulate`] for the same seed and path indices while holding
/// only the current states in memory.
pub struct PathBlock {
    stepper: Stepper,
    rngs: Vec<ChaCha8Rng>,
    d_state: usize,
    d_w: usize,
    state: Vec<f64>,
    scratch: Vec<f64>,
}

impl PathBlock {
    pub fn new(model: &Model, grid: &TimeGrid, seed: u64, first_path: usize, len: usize) -> Result<Self> {
        let stepper = model.stepper(grid.step_size())?;
        let s0 = model.initial_state();
        let d_state = model.d_state();
        let state = s0.iter().copied().cycle().take(len * d_state).collect();
        Ok(PathBlock {
            stepper,
            rngs: (first_path..first_path + len)
                .map(|p| path_rng(seed, p as u64))
                .collect(),
            d_state,
            d_w: model.d_w(),
            state,
            scratch: vec![0.0; d_state],
        })
    }

    pub fn len(&self) -> usize {
        self.rngs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rngs.is_empty()
    }

    /// Current `[len x d_state]` states.
    pub fn states(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.len(), self.d_state), &self.state).expect("block shape")
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.state[i * self.d_state..(i + 1) * self.d_state]
    }

    /// Advance every path by one step, writing the increments used into
    /// `dw` (`[len x d_w]`, row-major).
    pub fn advance(&mut self, dw: &mut [f64]) {
        let (ds, dwn) = (self.d_state, self.d_w);
        for (i, rng) in self.rngs.iter_mut().enumerate() {
            let w = &mut dw[i * dwn..(i + 1) * dwn];
            self.stepper.draw(rng, w);
            let s = &mut self.state[i * ds..(i + 1) * ds];
            self.stepper.step(s, w, &mut self.scratch);
            s.copy_from_slice(&self.scratch);
        }
    }
}
