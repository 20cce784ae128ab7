//! Backward induction with one regression per exercise date.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{discount, Model, PathBatch, Payoff, TimeGrid};
use crate::nn::{train, NetArchitecture, NetConfig, Normalizer, OutputScaling, RegressionBatch, RegressionNets, TrainConfig};
use crate::policy::{date_continuation, date_payoff, interval_increments, x_update, y_update, Policy, PolicyKind};
use crate::rng::{derive_seed, purpose};
use crate::samples::{input_width, interval_rows};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodOneConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Initialise each regression from the one at the next date.
    #[serde(default)]
    pub warm_start: bool,
}

impl MethodOneConfig {
    /// Active variation numbers, for manifests and reports.
    pub fn variations(&self, grid: &TimeGrid) -> Vec<u8> {
        let mut v = Vec::new();
        if self.warm_start {
            v.push(1);
        }
        if self.net.second_term {
            v.push(4);
        }
        if self.net.is_separate() {
            v.push(5);
        }
        if grid.substeps > 1 {
            v.push(6);
        }
        v
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DateDiagnostics {
    pub date: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub update: usize,
    /// Epochs run so far.
    pub epochs: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_lower: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainDiagnostics {
    /// Per regression date, in training order (`n-1` down to `0`).
    pub dates: Vec<DateDiagnostics>,
    /// Per strategy update (global network only).
    pub updates: Vec<UpdateDiagnostics>,
    pub in_sample_lower: f64,
    pub in_sample_upper: f64,
    pub wall_clock_secs: f64,
}

impl TrainDiagnostics {
    pub fn total_epochs(&self) -> usize {
        self.dates.iter().map(|d| d.epochs).sum::<usize>() + self.updates.last().map_or(0, |u| u.epochs)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        if self.updates.is_empty() {
            writeln!(w, "date,epochs,best_epoch,train_loss,validation_loss")?;
            for d in &self.dates {
                writeln!(
                    w,
                    "{},{},{},{:e},{:e}",
                    d.date, d.epochs, d.best_epoch, d.train_loss, d.validation_loss
                )?;
            }
        } else {
            writeln!(w, "update,epochs,train_loss,validation_loss,validation_lower")?;
            for u in &self.updates {
                writeln!(
                    w,
                    "{},{},{:e},{:e},{}",
                    u.update, u.epochs, u.train_loss, u.validation_loss, u.validation_lower
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn check_setup(model: &Model, paths: &PathBatch, payoff: &Payoff, grid: &TimeGrid) -> Result<()> {
    grid.validate()?;
    payoff.check_dim(model.d_assets())?;
    if paths.n_steps != grid.total_steps() {
        return Err(Error::shape(format!(
            "paths have {} steps but the grid has {} exercise dates x {} substeps",
            paths.n_steps, grid.n_exercise, grid.substeps
        )));
    }
    if paths.d_state != model.d_state() || paths.d_w != model.d_w() {
        return Err(Error::shape("paths were not simulated from this model"));
    }
    if paths.n_paths < 2 {
        return Err(Error::config("need at least two training paths"));
    }
    Ok(())
}

/// Train one network pair per exercise date by backward induction.
pub fn train_method_one(
    model: &Model,
    paths: &PathBatch,
    payoff: &Payoff,
    grid: &TimeGrid,
    cfg: &MethodOneConfig,
    seed: u64,
) -> Result<(Policy, TrainDiagnostics)> {
    let start = Instant::now();
    check_setup(model, paths, payoff, grid)?;
    cfg.train.validate()?;
    let n = grid.n_exercise;
    let m = grid.substeps;
    let arch = NetArchitecture {
        d_in: input_width(model.d_state(), false),
        d_w: model.d_w(),
        config: cfg.net.clone(),
    };
    let disc = discount(model.rate(), grid.exercise_dt());
    let groups: Vec<usize> = (0..paths.n_paths).collect();
    let f_n = date_payoff(payoff, grid, paths, n);
    let mut y = f_n.clone();
    let mut x = f_n;
    let mut trained: Vec<RegressionNets> = Vec::with_capacity(n);
    let mut diag = TrainDiagnostics::default();
    let mut fitted: Option<(Normalizer, OutputScaling)> = None;

    for i in (0..n).rev() {
        let (inputs, dw) = interval_rows(paths, grid, i, false, 0..paths.n_paths);
        let batch = RegressionBatch {
            substeps: m,
            h: grid.step_size(),
            inputs,
            dw,
            target: &y * disc,
        };
        let mut nets = match (trained.last(), cfg.warm_start) {
            (Some(prev), true) => RegressionNets::warm_start_from(&arch, prev)?,
            _ => RegressionNets::he_init(&arch, derive_seed(seed, purpose::NET_INIT, i as u64))?,
        };
        match &fitted {
            Some((norm, sc)) => {
                nets.input_norm = norm.clone();
                nets.scaling = *sc;
            }
            None => {
                let norm = Normalizer::fit(batch.inputs.view());
                let sc = OutputScaling::fit(batch.target.view(), grid.exercise_dt());
                nets.input_norm = norm.clone();
                nets.scaling = sc;
                fitted = Some((norm, sc));
            }
        }
        let hist = train(&mut nets, &batch, &groups, &cfg.train, seed).map_err(|e| e.at_date(i))?;
        let best = &hist.epochs[hist.best_epoch];
        diag.dates.push(DateDiagnostics {
            date: i,
            epochs: hist.epochs_run(),
            best_epoch: hist.best_epoch,
            train_loss: best.train_loss,
            validation_loss: best.validation_loss,
        });
        drop(batch);

        let cv = interval_increments(&nets, grid, false, paths, i)?;
        if i == 0 {
            y = &y * disc - &cv;
            x = &x * disc - &cv;
        } else {
            let f = date_payoff(payoff, grid, paths, i);
            let phi = date_continuation(&nets, grid, false, paths, i)?;
            y = y_update(y.view(), phi.view(), cv.view(), f.view(), disc);
            x = x_update(x.view(), cv.view(), f.view(), disc);
        }
        trained.push(nets);
    }
    trained.reverse();
    let policy = Policy {
        kind: PolicyKind::PerDate,
        grid: *grid,
        payoff: *payoff,
        rate: model.rate(),
        nets: trained,
    };
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            epoch: 0,
            date: Some(0),
            loss: f64::NAN,
        });
    }
    diag.in_sample_lower = mean(&y);
    diag.in_sample_upper = mean(&x);
    diag.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((policy, diag))
}

pub(crate) fn mean(a: &Array1<f64>) -> f64 {
    a.sum() / a.len().max(1) as f64
}
