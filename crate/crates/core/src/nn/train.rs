//! Mini-batch ADAM training with validation-based early stopping.

use ndarray::s;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::regression::{Gradients, RegressionBatch, RegressionNets};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, purpose, seeded};

/// Samples per chunk when a batch is split for parallel evaluation.
const CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay per epoch.
    #[serde(default = "one")]
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    pub validation_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lr_decay: 1.0,
            batch_size: 512,
            max_epochs: 100,
            patience: 5,
            adam: AdamConfig::default(),
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("train.lr_decay must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("train.patience must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("train.validation_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// One record per completed epoch; epoch 0 is the untrained network.
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

impl TrainHistory {
    /// Number of optimisation epochs actually run.
    pub fn epochs_run(&self) -> usize {
        self.epochs.len().saturating_sub(1)
    }
}

/// Split sample indices into (train, validation) so that all samples of a
/// group land on the same side. `groups[i]` is the path of sample `i`.
pub fn split_by_group(groups: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(&mut seeded(seed));
    let n_val = if ids.len() < 2 {
        0
    } else {
        ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1)
    };
    let max_id = ids.iter().copied().max().map_or(0, |m| m + 1);
    let mut is_val = vec![false; max_id];
    for &g in &ids[..n_val] {
        is_val[g] = true;
    }
    let (val, train): (Vec<usize>, Vec<usize>) = (0..groups.len()).partition(|&i| is_val[groups[i]]);
    (train, val)
}

/// Copy the samples `idx` of `data` into `out`.
pub fn gather(data: &RegressionBatch, idx: &[usize], out: &mut RegressionBatch) {
    let m = data.substeps;
    out.substeps = m;
    out.h = data.h;
    out.resize(idx.len());
    for (o, &i) in idx.iter().enumerate() {
        out.inputs
            .slice_mut(s![o * m..(o + 1) * m, ..])
            .assign(&data.inputs.slice(s![i * m..(i + 1) * m, ..]));
        out.dw
            .slice_mut(s![o * m..(o + 1) * m, ..])
            .assign(&data.dw.slice(s![i * m..(i + 1) * m, ..]));
        out.target[o] = data.target[i];
    }
}

fn empty_like(data: &RegressionBatch) -> RegressionBatch {
    RegressionBatch::new(0, data.substeps, data.inputs.ncols(), data.dw.ncols(), data.h)
}

/// Mean loss over the samples `idx`, evaluated in parallel chunks.
pub fn subset_loss(nets: &RegressionNets, data: &RegressionBatch, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::EmptyData);
    }
    let parts = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut b = empty_like(data);
            gather(data, chunk, &mut b);
            nets.loss(&b).map(|l| l * chunk.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum::<f64>() / idx.len() as f64)
}

/// Mean loss over the whole data set.
pub fn data_loss(nets: &RegressionNets, data: &RegressionBatch) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    subset_loss(nets, data, &idx)
}

fn batch_grads(nets: &RegressionNets, batch: &RegressionBatch) -> Result<(f64, Gradients)> {
    let n = batch.len();
    if n <= CHUNK || rayon::current_num_threads() == 1 {
        return nets.loss_and_grads(batch);
    }
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&a| {
            let idx: Vec<usize> = (a..(a + CHUNK).min(n)).collect();
            let mut b = empty_like(batch);
            gather(batch, &idx, &mut b);
            let (l, g) = nets.loss_and_grads(&b)?;
            Ok((l, g, idx.len() as f64 / n as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    let mut grads = nets.zero_grads();
    for (l, g, w) in parts {
        loss += w * l;
        for (acc, blk) in grads.iter_mut().zip(g) {
            for (a, v) in acc.iter_mut().zip(blk) {
                *a += w * v;
            }
        }
    }
    Ok((loss, grads))
}

/// Optimiser state that persists across epochs.
pub struct Trainer {
    pub cfg: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    epochs_done: usize,
    scratch: Option<RegressionBatch>,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, nets: &RegressionNets, seed: u64) -> Self {
        Trainer {
            cfg: cfg.clone(),
            adam: AdamState::new(nets.block_sizes()),
            rng: seeded(derive_seed(seed, purpose::SHUFFLE, 0)),
            epochs_done: 0,
            scratch: None,
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    fn learning_rate(&self) -> f64 {
        self.cfg.learning_rate * self.cfg.lr_decay.powi(self.epochs_done as i32)
    }

    /// One pass over `idx` in shuffled mini-batches; returns the mean
    /// mini-batch loss before each update.
    pub fn epoch(&mut self, nets: &mut RegressionNets, data: &RegressionBatch, idx: &[usize]) -> Result<f64> {
        if idx.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut order = idx.to_vec();
        order.shuffle(&mut self.rng);
        let lr = self.learning_rate();
        let mut batch = self.scratch.take().unwrap_or_else(|| empty_like(data));
        let mut total = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            gather(data, chunk, &mut batch);
            let (loss, grads) = batch_grads(nets, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: self.epochs_done + 1,
                    date: None,
                    loss,
                });
            }
            total += loss * chunk.len() as f64;
            let gs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            let mut ps: Vec<&mut [f64]> = nets.nets.iter_mut().map(|n| n.params_mut()).collect();
            self.adam.step(&self.cfg.adam, lr, &mut ps, &gs);
        }
        self.scratch = Some(batch);
        self.epochs_done += 1;
        Ok(total / idx.len() as f64)
    }
}

/// Train `nets` on `data` with early stopping on a validation split by
/// group. On return `nets` holds the parameters with the lowest validation
/// loss seen, including the initial ones.
pub fn train(
    nets: &mut RegressionNets,
    data: &RegressionBatch,
    groups: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if groups.len() != data.len() {
        return Err(Error::shape("one group index per sample required"));
    }
    let (train_idx, val_idx) =
        split_by_group(groups, cfg.validation_fraction, derive_seed(seed, purpose::VALIDATION_SPLIT, 0));
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::config("need at least two paths to split into train and validation"));
    }
    let mut history = TrainHistory::default();
    let v0 = subset_loss(nets, data, &val_idx)?;
    let t0 = subset_loss(nets, data, &train_idx)?;
    history.epochs.push(EpochRecord {
        epoch: 0,
        train_loss: t0,
        validation_loss: v0,
    });
    history.best_validation_loss = v0;
    let mut best = nets.clone();
    let mut trainer = Trainer::new(cfg, nets, seed);
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let train_loss = trainer.epoch(nets, data, &train_idx)?;
        let val = subset_loss(nets, data, &val_idx)?;
        if !val.is_finite() {
            return Err(Error::Divergence {
                epoch,
                date: None,
                loss: val,
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss: val,
        });
        if val < history.best_validation_loss {
            history.best_validation_loss = val;
            history.best_epoch = epoch;
            best.clone_from(nets);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    *nets = best;
    Ok(history)
}
