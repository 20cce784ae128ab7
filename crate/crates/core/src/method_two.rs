//! One global network over `(t, state)`, trained by alternating regression
//! epochs with updates of the stopping strategy.

use std::time::Instant;

use ndarray::{s, Array1, Array2};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{discount, simulate, Model, PathBatch, Payoff, TimeGrid};
use crate::method_one::{check_setup, mean, TrainDiagnostics, UpdateDiagnostics};
use crate::nn::{
    data_loss, NetArchitecture, NetConfig, Normalizer, OutputScaling, RegressionBatch, RegressionNets, TrainConfig,
    Trainer,
};
use crate::policy::{ExerciseRule, Policy, PolicyKind};
use crate::rng::{derive_seed, purpose, seeded};
use crate::samples::{input_width, interval_rows};

/// Which exercise dates contribute training samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TimeSubset {
    #[default]
    All,
    /// Every `ceil(n/k)`-th date counted back from `t_{n-1}`.
    Grid { k: usize },
    /// `k` distinct dates drawn once per run.
    Random { k: usize },
}

/// Fresh simulated paths per strategy update instead of a fixed training set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreshData {
    pub batches_per_update: usize,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlternationConfig {
    pub epochs_per_update: usize,
    /// Updates without a lower validation loss before stopping.
    pub stagnation_patience: usize,
    /// Cap on strategy updates. `Some(0)` keeps the maturity-only targets.
    #[serde(default)]
    pub max_updates: Option<usize>,
    /// Hard cap on training rounds.
    pub max_rounds: usize,
    pub validation_paths: usize,
    #[serde(default)]
    pub time_subset: TimeSubset,
    #[serde(default)]
    pub fresh_data: Option<FreshData>,
}

impl Default for AlternationConfig {
    fn default() -> Self {
        AlternationConfig {
            epochs_per_update: 1,
            stagnation_patience: 8,
            max_updates: None,
            max_rounds: 200,
            validation_paths: 10_000,
            time_subset: TimeSubset::All,
            fresh_data: None,
        }
    }
}

impl AlternationConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.epochs_per_update == 0 {
            return Err(Error::config("alternation.epochs_per_update must be at least 1"));
        }
        if self.stagnation_patience == 0 {
            return Err(Error::config("alternation.stagnation_patience must be at least 1"));
        }
        if self.max_rounds == 0 {
            return Err(Error::config("alternation.max_rounds must be at least 1"));
        }
        if self.validation_paths < 2 {
            return Err(Error::config("alternation.validation_paths must be at least 2"));
        }
        if let TimeSubset::Grid { k } | TimeSubset::Random { k } = self.time_subset {
            if k == 0 || k > n {
                return Err(Error::config(format!(
                    "alternation.time_subset.k must lie in 1..={n}, got {k}"
                )));
            }
        }
        if let Some(f) = self.fresh_data {
            if f.batches_per_update == 0 || f.batch_size < 1 {
                return Err(Error::config(
                    "alternation.fresh_data needs at least one batch of at least one path",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodTwoConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub alternation: AlternationConfig,
}

impl MethodTwoConfig {
    /// Active variation numbers, for manifests and reports.
    pub fn variations(&self, grid: &TimeGrid) -> Vec<u8> {
        let mut v = Vec::new();
        if self.alternation.time_subset != TimeSubset::All {
            v.push(2);
        }
        if self.alternation.fresh_data.is_some() {
            v.push(3);
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

/// Training dates for a given subset mode, ascending.
pub fn select_training_times(n: usize, subset: TimeSubset, seed: u64) -> Result<Vec<usize>> {
    match subset {
        TimeSubset::All => Ok((0..n).collect()),
        TimeSubset::Grid { k } | TimeSubset::Random { k } if k == 0 || k > n => {
            Err(Error::config(format!("time subset size must lie in 1..={n}, got {k}")))
        }
        TimeSubset::Grid { k } => {
            let step = n.div_ceil(k);
            let mut v: Vec<usize> = (0..k).filter_map(|j| (n - 1).checked_sub(j * step)).collect();
            v.reverse();
            Ok(v)
        }
        TimeSubset::Random { k } => {
            let mut rng = seeded(derive_seed(seed, purpose::TIME_SUBSET, 0));
            let mut v = sample(&mut rng, n, k).into_vec();
            v.sort_unstable();
            Ok(v)
        }
    }
}

/// Pooled regression samples of a path batch over several dates. Sample
/// `s * n_paths + p` is path `p` at date `dates[s]`.
struct Pool {
    dates: Vec<usize>,
    batch: RegressionBatch,
}

impl Pool {
    fn build(paths: &PathBatch, grid: &TimeGrid, dates: &[usize]) -> Pool {
        let (np, m) = (paths.n_paths, grid.substeps);
        let mut batch = RegressionBatch::new(
            np * dates.len(),
            m,
            input_width(paths.d_state, true),
            paths.d_w,
            grid.step_size(),
        );
        for (slot, &i) in dates.iter().enumerate() {
            let (x, w) = interval_rows(paths, grid, i, true, 0..np);
            let rows = slot * np * m..(slot + 1) * np * m;
            batch.inputs.slice_mut(s![rows.clone(), ..]).assign(&x);
            batch.dw.slice_mut(s![rows, ..]).assign(&w);
        }
        Pool {
            dates: dates.to_vec(),
            batch,
        }
    }

    /// Targets `disc * Y_{i+1}` from a lower-bound process indexed by date.
    fn set_targets(&mut self, y: &[Array1<f64>], disc: f64) {
        let np = self.batch.len() / self.dates.len().max(1);
        for (slot, &i) in self.dates.iter().enumerate() {
            self.batch
                .target
                .slice_mut(s![slot * np..(slot + 1) * np])
                .assign(&(&y[i + 1] * disc));
        }
    }
}

/// Lower-bound process when every path stops at maturity, without
/// martingale corrections: `Y_i = exp(-r (T - t_i)) f(S_T)`.
pub fn maturity_targets(payoff: &Payoff, grid: &TimeGrid, rate: f64, paths: &PathBatch) -> Vec<Array1<f64>> {
    let n = grid.n_exercise;
    let f_n = crate::policy::date_payoff(payoff, grid, paths, n);
    (0..=n)
        .map(|i| &f_n * discount(rate, grid.maturity - grid.exercise_time(i)))
        .collect()
}

/// Simulate `batches * batch_size` fresh paths for round `round` and pool
/// their samples over `dates`, with targets from the current strategy.
pub fn refresh_training_data(
    model: &Model,
    policy: &Policy,
    fresh: FreshData,
    dates: &[usize],
    round: usize,
    strategy: Option<ExerciseRule>,
    seed: u64,
) -> Result<Vec<RegressionBatch>> {
    let grid = policy.grid;
    let disc = discount(policy.rate, grid.exercise_dt());
    (0..fresh.batches_per_update)
        .map(|b| {
            let idx = (round * fresh.batches_per_update + b) as u64;
            let paths = simulate(model, &grid, fresh.batch_size, derive_seed(seed, purpose::FRESH_DATA, idx))?;
            let y = match strategy {
                Some(rule) => policy.backward_recursion(&paths, rule, false)?.y,
                None => maturity_targets(&policy.payoff, &grid, policy.rate, &paths),
            };
            let mut pool = Pool::build(&paths, &grid, dates);
            pool.set_targets(&y, disc);
            Ok(pool.batch)
        })
        .collect()
}

/// Training data for the global network.
pub enum TrainingData<'a> {
    /// A fixed path batch reused in every round.
    Fixed(&'a PathBatch),
    /// Fresh paths each round, configured by `AlternationConfig::fresh_data`.
    Fresh,
}

fn all_rows(batch: &RegressionBatch) -> Vec<usize> {
    (0..batch.len()).collect()
}

/// Train one global network pair by alternating regression epochs and
/// strategy updates.
///
/// Returns the parameters with the highest validation lower bound seen after
/// a strategy update, or with the lowest validation loss when strategy
/// updates are disabled.
pub fn train_method_two(
    model: &Model,
    data: TrainingData<'_>,
    payoff: &Payoff,
    grid: &TimeGrid,
    cfg: &MethodTwoConfig,
    seed: u64,
) -> Result<(Policy, TrainDiagnostics)> {
    let start = Instant::now();
    grid.validate()?;
    cfg.train.validate()?;
    let alt = &cfg.alternation;
    alt.validate(grid.n_exercise)?;
    let fresh = match (&data, alt.fresh_data) {
        (TrainingData::Fixed(paths), None) => {
            check_setup(model, paths, payoff, grid)?;
            None
        }
        (TrainingData::Fresh, Some(f)) => Some(f),
        (TrainingData::Fixed(_), Some(_)) => {
            return Err(Error::config("alternation.fresh_data is set but a fixed path batch was given"))
        }
        (TrainingData::Fresh, None) => {
            return Err(Error::config("fresh training data requires alternation.fresh_data"))
        }
    };
    payoff.check_dim(model.d_assets())?;

    let n = grid.n_exercise;
    let rate = model.rate();
    let disc = discount(rate, grid.exercise_dt());
    let mut dates = select_training_times(n, alt.time_subset, seed)?;
    if dates.first() != Some(&0) {
        dates.insert(0, 0);
    }
    let updates_allowed = alt.max_updates != Some(0);
    let max_updates = alt.max_updates.unwrap_or(usize::MAX);
    let arch = NetArchitecture {
        d_in: input_width(model.d_state(), true),
        d_w: model.d_w(),
        config: cfg.net.clone(),
    };
    let nets = RegressionNets::he_init(&arch, derive_seed(seed, purpose::NET_INIT, 0))?;
    let mut policy = Policy {
        kind: PolicyKind::Global,
        grid: *grid,
        payoff: *payoff,
        rate,
        nets: vec![nets],
    };

    let val_paths = simulate(
        model,
        grid,
        alt.validation_paths,
        derive_seed(seed, purpose::VALIDATION_PATHS, 0),
    )?;
    let all_dates: Vec<usize> = (0..n).collect();
    let mut val_pool = Pool::build(&val_paths, grid, &all_dates);
    val_pool.set_targets(&maturity_targets(payoff, grid, rate, &val_paths), disc);

    let mut train_pool = match &data {
        TrainingData::Fixed(paths) => {
            let mut pool = Pool::build(paths, grid, &dates);
            pool.set_targets(&maturity_targets(payoff, grid, rate, paths), disc);
            Some(pool)
        }
        TrainingData::Fresh => None,
    };

    // Normalisation is fitted once, on the first training data seen.
    let first_fresh = match fresh {
        Some(f) => Some(refresh_training_data(model, &policy, f, &dates, 0, None, seed)?),
        None => None,
    };
    {
        let fit_on = match (&train_pool, &first_fresh) {
            (Some(p), _) => &p.batch,
            (None, Some(b)) => &b[0],
            (None, None) => unreachable!("training data is either fixed or fresh"),
        };
        let nets = &mut policy.nets[0];
        nets.input_norm = Normalizer::fit(fit_on.inputs.view());
        nets.scaling = OutputScaling::fit(fit_on.target.view(), grid.exercise_dt());
    }

    let mut trainer = Trainer::new(&cfg.train, &policy.nets[0], seed);
    let mut diag = TrainDiagnostics::default();
    let mut best_loss = f64::INFINITY;
    let mut best_lower = f64::NEG_INFINITY;
    let mut best_nets = policy.nets[0].clone();
    let mut stale = 0;
    let mut updates = 0;
    let mut strategy: Option<ExerciseRule> = None;
    let mut pending = first_fresh;

    for round in 0..alt.max_rounds {
        let nets = &mut policy.nets[0];
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        match &train_pool {
            Some(pool) => {
                let idx = all_rows(&pool.batch);
                for _ in 0..alt.epochs_per_update {
                    loss_sum += trainer.epoch(nets, &pool.batch, &idx)?;
                    loss_count += 1;
                }
            }
            None => {
                let batches = match pending.take() {
                    Some(b) => b,
                    None => refresh_training_data(model, &policy, fresh.expect("fresh mode"), &dates, round, strategy, seed)?,
                };
                let nets = &mut policy.nets[0];
                for batch in &batches {
                    let idx = all_rows(batch);
                    for _ in 0..alt.epochs_per_update {
                        loss_sum += trainer.epoch(nets, batch, &idx)?;
                        loss_count += 1;
                    }
                }
            }
        }
        let train_loss = loss_sum / loss_count as f64;
        let nets = &policy.nets[0];
        let val_loss = data_loss(nets, &val_pool.batch)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch: trainer.epochs_done(),
                date: None,
                loss: val_loss,
            });
        }
        let improved = val_loss < best_loss;
        if improved {
            best_loss = val_loss;
            stale = 0;
        } else {
            stale += 1;
        }

        let validation_lower = if updates_allowed && updates < max_updates {
            let rec = policy.backward_recursion(&val_paths, ExerciseRule::Policy, false)?;
            let lower = mean(&rec.y[0]);
            if !lower.is_finite() {
                return Err(Error::Divergence {
                    epoch: trainer.epochs_done(),
                    date: Some(0),
                    loss: lower,
                });
            }
            if lower > best_lower {
                best_lower = lower;
                best_nets.clone_from(&policy.nets[0]);
            }
            val_pool.set_targets(&rec.y, disc);
            if let (Some(pool), TrainingData::Fixed(paths)) = (train_pool.as_mut(), &data) {
                let rec = policy.backward_recursion(paths, ExerciseRule::Policy, false)?;
                pool.set_targets(&rec.y, disc);
            }
            strategy = Some(ExerciseRule::Policy);
            updates += 1;
            lower
        } else {
            if improved {
                best_nets.clone_from(&policy.nets[0]);
            }
            let rule = if updates_allowed {
                ExerciseRule::Policy
            } else {
                ExerciseRule::MaturityOnly
            };
            mean(&policy.backward_recursion(&val_paths, rule, false)?.y[0])
        };
        diag.updates.push(UpdateDiagnostics {
            update: round + 1,
            epochs: trainer.epochs_done(),
            train_loss,
            validation_loss: val_loss,
            validation_lower,
        });
        if stale >= alt.stagnation_patience {
            break;
        }
    }
    drop(train_pool);

    policy.nets[0] = best_nets;
    let rule = if updates_allowed {
        ExerciseRule::Policy
    } else {
        ExerciseRule::MaturityOnly
    };
    let in_sample = match &data {
        TrainingData::Fixed(paths) => policy.backward_recursion(paths, rule, true)?,
        TrainingData::Fresh => policy.backward_recursion(&val_paths, rule, true)?,
    };
    diag.in_sample_lower = mean(&in_sample.y[0]);
    diag.in_sample_upper = in_sample.x.as_ref().map_or(f64::NAN, |x| mean(&x[0]));
    diag.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((policy, diag))
}

/// Inputs of every pooled sample, for inspection and tests.
pub fn pooled_inputs(paths: &PathBatch, grid: &TimeGrid, dates: &[usize]) -> Array2<f64> {
    Pool::build(paths, grid, dates).batch.inputs
}
