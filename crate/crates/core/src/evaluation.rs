//! Out-of-sample bounds, hedging errors and the variance-reduction check.
//!
//! Per path, with `d_j = exp(-r t_j)`, `cv_i` the martingale increment over
//! exercise interval `i` and `M_j = sum_{i<j} d_i cv_i`:
//!
//! ```text
//! lower = d_tau f_tau - M_tau
//! upper = max_{j=1..n} (d_j f_j - M_j)
//! ```

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{discount, simulate, Model, PathBlock};
use crate::policy::{exercises, ExerciseRule, Policy};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// How often the hedge is rebalanced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rebalance {
    /// At every simulation step.
    #[default]
    Substeps,
    /// Only at exercise dates; the position is held across substeps.
    ExerciseDates,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub rule: ExerciseRule,
    pub rebalance: Rebalance,
    /// Paths simulated together in the forward evaluator.
    pub block_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            rule: ExerciseRule::Policy,
            rebalance: Rebalance::Substeps,
            block_size: 4096,
        }
    }
}

/// Per-path results of one evaluation run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathOutcomes {
    /// Exercise date index in `1..=n`.
    pub tau: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Discounted payoff at `tau` without the control variate.
    pub stopped_payoff: Vec<f64>,
}

impl PathOutcomes {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    fn extend(&mut self, o: PathOutcomes) {
        self.tau.extend(o.tau);
        self.lower.extend(o.lower);
        self.upper.extend(o.upper);
        self.stopped_payoff.extend(o.stopped_payoff);
    }
}

/// Simulate paths block by block and apply the policy while stepping
/// forward. Memory is `O(block_size * d)` regardless of the grid.
pub fn evaluate_forward(
    policy: &Policy,
    model: &Model,
    n_paths: usize,
    seed: u64,
    opts: &EvalOptions,
) -> Result<PathOutcomes> {
    policy.check_model(model)?;
    if n_paths == 0 {
        return Err(Error::config("number of evaluation paths must be at least 1"));
    }
    let bs = opts.block_size.max(1);
    let starts: Vec<usize> = (0..n_paths).step_by(bs).collect();
    let parts = starts
        .par_iter()
        .map(|&a| forward_block(policy, model, seed, a, (a + bs).min(n_paths) - a, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut out = PathOutcomes::default();
    for p in parts {
        out.extend(p);
    }
    Ok(out)
}

fn forward_block(
    policy: &Policy,
    model: &Model,
    seed: u64,
    first: usize,
    len: usize,
    opts: &EvalOptions,
) -> Result<PathOutcomes> {
    let grid = &policy.grid;
    let (n, m) = (grid.n_exercise, grid.substeps);
    let (d_assets, d_w) = (model.d_assets(), model.d_w());
    let h = grid.step_size();
    let mut blk = PathBlock::new(model, grid, seed, first, len)?;
    let mut out = PathOutcomes {
        tau: vec![n; len],
        lower: vec![0.0; len],
        upper: vec![f64::NEG_INFINITY; len],
        stopped_payoff: vec![0.0; len],
    };
    let mut stopped = vec![false; len];
    let mut mart = vec![0.0; len];
    let mut dw = vec![0.0; len * d_w];
    let mut dw_sum = vec![0.0; len * d_w];
    let mut cv = vec![0.0; len];
    let payoff = |blk: &PathBlock, p: usize| policy.payoff.value(&blk.state(p)[..d_assets]);

    for i in 0..=n {
        let d_i = discount(policy.rate, grid.exercise_time(i));
        if i >= 1 {
            let f: Vec<f64> = (0..len).map(|p| payoff(&blk, p)).collect();
            for p in 0..len {
                out.upper[p] = out.upper[p].max(d_i * f[p] - mart[p]);
            }
            if i == n {
                for p in (0..len).filter(|&p| !stopped[p]) {
                    out.tau[p] = n;
                    out.stopped_payoff[p] = d_i * f[p];
                    out.lower[p] = d_i * f[p] - mart[p];
                }
                break;
            }
            if opts.rule == ExerciseRule::Policy {
                // only live, in-the-money paths can stop
                let cand: Vec<usize> = (0..len).filter(|&p| !stopped[p] && f[p] > 0.0).collect();
                if !cand.is_empty() {
                    let step = grid.exercise_step(i);
                    let states = gather_rows(&blk, &cand);
                    let x = policy.inputs_at_step(step, states.view());
                    let phi = policy.nets_for(i).continuation(x.view())?;
                    for (c, &p) in cand.iter().enumerate() {
                        if exercises(f[p], phi[c]) {
                            stopped[p] = true;
                            out.tau[p] = i;
                            out.stopped_payoff[p] = d_i * f[p];
                            out.lower[p] = d_i * f[p] - mart[p];
                        }
                    }
                }
            }
        }
        let nets = policy.nets_for(i);
        let second = nets.arch.config.second_term;
        cv.iter_mut().for_each(|c| *c = 0.0);
        dw_sum.iter_mut().for_each(|c| *c = 0.0);
        let mut held: Option<Array2<f64>> = None;
        for k in 0..m {
            let step = i * m + k;
            let need_psi = opts.rebalance == Rebalance::Substeps || k == 0;
            if need_psi {
                let x = policy.inputs_at_step(step, blk.states());
                held = Some(nets.increment_coefficients(x.view())?);
            }
            blk.advance(&mut dw);
            let psi = held.as_ref().expect("coefficients computed at k = 0");
            match opts.rebalance {
                Rebalance::Substeps => {
                    for p in 0..len {
                        for j in 0..d_w {
                            let w = dw[p * d_w + j];
                            cv[p] += psi[[p, j]] * w;
                            if second {
                                cv[p] += psi[[p, d_w + j]] * (w * w - h);
                            }
                        }
                    }
                }
                Rebalance::ExerciseDates => {
                    for (s, w) in dw_sum.iter_mut().zip(&dw) {
                        *s += w;
                    }
                }
            }
        }
        if opts.rebalance == Rebalance::ExerciseDates {
            let psi = held.as_ref().expect("coefficients computed at k = 0");
            let dt = grid.exercise_dt();
            for p in 0..len {
                for j in 0..d_w {
                    let w = dw_sum[p * d_w + j];
                    cv[p] += psi[[p, j]] * w;
                    if second {
                        cv[p] += psi[[p, d_w + j]] * (w * w - dt);
                    }
                }
            }
        }
        for p in 0..len {
            mart[p] += d_i * cv[p];
        }
    }
    Ok(out)
}

fn gather_rows(blk: &PathBlock, rows: &[usize]) -> Array2<f64> {
    let d = blk.states().ncols();
    let mut out = Array2::zeros((rows.len(), d));
    for (o, &p) in rows.iter().enumerate() {
        out.row_mut(o).as_slice_mut().unwrap().copy_from_slice(blk.state(p));
    }
    out
}

/// Materialise the paths and replay the training-time recursions with
/// frozen networks. Same estimator as [`evaluate_forward`].
pub fn evaluate_backward(
    policy: &Policy,
    model: &Model,
    n_paths: usize,
    seed: u64,
    rule: ExerciseRule,
) -> Result<PathOutcomes> {
    policy.check_model(model)?;
    let paths = simulate(model, &policy.grid, n_paths, seed)?;
    let rec = policy.backward_recursion(&paths, rule, true)?;
    let stopped_payoff = rec
        .tau
        .iter()
        .enumerate()
        .map(|(p, &t)| {
            let f = policy.payoff.value(paths.assets(p, policy.grid.exercise_step(t)));
            discount(policy.rate, policy.grid.exercise_time(t)) * f
        })
        .collect();
    Ok(PathOutcomes {
        lower: rec.y[0].to_vec(),
        upper: rec.x.expect("upper requested")[0].to_vec(),
        tau: rec.tau,
        stopped_payoff,
    })
}

/// Sample mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Unbiased sample variance.
pub fn sample_variance(v: &[f64]) -> f64 {
    let (_, se) = mean_se(v);
    se * se * v.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatEstimate {
    pub seed: u64,
    pub lower_mean: f64,
    pub lower_se: f64,
    pub upper_mean: f64,
    pub upper_se: f64,
    pub gap_mean: f64,
    pub gap_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsEstimate {
    pub schema_version: u32,
    pub lower_mean: f64,
    /// Monte Carlo standard error of `lower_mean`.
    pub lower_se: f64,
    pub upper_mean: f64,
    pub upper_se: f64,
    pub gap_mean: f64,
    pub gap_se: f64,
    /// Standard deviation across repeats, absent for a single repeat.
    pub lower_sd: Option<f64>,
    pub upper_sd: Option<f64>,
    pub gap_sd: Option<f64>,
    pub n_eval: usize,
    pub n_repeats: usize,
    pub repeats: Vec<RepeatEstimate>,
}

impl BoundsEstimate {
    /// Combined standard error of the two means.
    pub fn combined_se(&self) -> f64 {
        (self.lower_se.powi(2) + self.upper_se.powi(2)).sqrt()
    }
}

/// Summary of one evaluation run.
pub fn summarize(outcomes: &PathOutcomes, seed: u64) -> RepeatEstimate {
    let (lower_mean, lower_se) = mean_se(&outcomes.lower);
    let (upper_mean, upper_se) = mean_se(&outcomes.upper);
    let gap: Vec<f64> = outcomes.upper.iter().zip(&outcomes.lower).map(|(u, l)| u - l).collect();
    let (gap_mean, gap_se) = mean_se(&gap);
    RepeatEstimate {
        seed,
        lower_mean,
        lower_se,
        upper_mean,
        upper_se,
        gap_mean,
        gap_se,
    }
}

fn sd(values: impl Iterator<Item = f64> + Clone) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (v.len() > 1).then(|| sample_variance(&v).sqrt())
}

/// Run the evaluator once per seed on `n_eval` fresh paths and aggregate.
pub fn estimate_bounds(
    policy: &Policy,
    model: &Model,
    n_eval: usize,
    seeds: &[u64],
    opts: &EvalOptions,
) -> Result<BoundsEstimate> {
    if seeds.is_empty() {
        return Err(Error::config("at least one evaluation repeat is required"));
    }
    let mut repeats = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let out = evaluate_forward(policy, model, n_eval, s, opts)?;
        repeats.push(summarize(&out, s));
    }
    let r = repeats.len() as f64;
    let avg = |f: fn(&RepeatEstimate) -> f64| repeats.iter().map(f).sum::<f64>() / r;
    let pooled = |f: fn(&RepeatEstimate) -> f64| repeats.iter().map(|e| f(e).powi(2)).sum::<f64>().sqrt() / r;
    let lower_mean = avg(|e| e.lower_mean);
    let upper_mean = avg(|e| e.upper_mean);
    Ok(BoundsEstimate {
        schema_version: REPORT_SCHEMA_VERSION,
        lower_mean,
        lower_se: pooled(|e| e.lower_se),
        upper_mean,
        upper_se: pooled(|e| e.upper_se),
        gap_mean: upper_mean - lower_mean,
        gap_se: pooled(|e| e.gap_se),
        lower_sd: sd(repeats.iter().map(|e| e.lower_mean)),
        upper_sd: sd(repeats.iter().map(|e| e.upper_mean)),
        gap_sd: sd(repeats.iter().map(|e| e.gap_mean)),
        n_eval,
        n_repeats: repeats.len(),
        repeats,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub min: f64,
    pub max: f64,
    /// `(probability, value)` pairs.
    pub quantiles: Vec<(f64, f64)>,
}

impl Summary {
    pub fn of(v: &[f64]) -> Summary {
        let (mean, se) = mean_se(v);
        let mut sorted = v.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (sorted.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        };
        Summary {
            mean,
            sd: sample_variance(v).sqrt(),
            se,
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            quantiles: [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99].iter().map(|&p| (p, q(p))).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts_eps1: Vec<usize>,
    pub counts_eps2: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HedgeReport {
    pub schema_version: u32,
    pub v0: f64,
    pub rebalance: Rebalance,
    pub eps1: Vec<f64>,
    pub eps2: Vec<f64>,
    pub eps1_summary: Summary,
    pub eps2_summary: Summary,
    /// Standard deviation of the discounted stopped payoff (no hedge).
    pub unhedged_sd: f64,
    pub histogram: Histogram,
}

impl HedgeReport {
    pub fn write_histogram_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "bin_left,bin_right,count_eps1,count_eps2")?;
        let h = &self.histogram;
        for b in 0..h.counts_eps1.len() {
            writeln!(w, "{},{},{},{}", h.edges[b], h.edges[b + 1], h.counts_eps1[b], h.counts_eps2[b])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn histogram(a: &[f64], b: &[f64], bins: usize) -> Histogram {
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let mut hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let count = |v: &[f64]| {
        let mut c = vec![0usize; bins];
        for &x in v {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            c[k] += 1;
        }
        c
    };
    Histogram {
        counts_eps1: count(a),
        counts_eps2: count(b),
        edges,
    }
}

/// Pathwise hedging errors of the self-financing strategy defined by `Psi`,
/// started from capital `v0`:
///
/// ```text
/// eps1 = v0 + G_tau - d_tau Z_tau
/// eps2 = v0 + min_{j=1..n} (G_j - d_j Z_j)
/// ```
///
/// where `G` is the discounted gain of the hedge, i.e. the accumulated
/// martingale increments `M`.
pub fn hedging_errors(
    policy: &Policy,
    model: &Model,
    n_paths: usize,
    seed: u64,
    v0: f64,
    rebalance: Rebalance,
) -> Result<HedgeReport> {
    let opts = EvalOptions {
        rebalance,
        ..EvalOptions::default()
    };
    let out = evaluate_forward(policy, model, n_paths, seed, &opts)?;
    let eps1: Vec<f64> = out.lower.iter().map(|l| v0 - l).collect();
    let eps2: Vec<f64> = out.upper.iter().map(|u| v0 - u).collect();
    Ok(HedgeReport {
        schema_version: REPORT_SCHEMA_VERSION,
        v0,
        rebalance,
        eps1_summary: Summary::of(&eps1),
        eps2_summary: Summary::of(&eps2),
        unhedged_sd: sample_variance(&out.stopped_payoff).sqrt(),
        histogram: histogram(&eps1, &eps2, 50),
        eps1,
        eps2,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    /// Sample variance of the discounted stopped payoff.
    pub var_plain: f64,
    /// Sample variance of the lower-bound summand with the control variate.
    pub var_cv: f64,
}

impl VarianceCheck {
    pub fn reduction_factor(&self) -> f64 {
        self.var_plain / self.var_cv
    }
}

/// Compare the variance of the lower-bound estimator with and without the
/// control variate on the same paths.
pub fn variance_check(policy: &Policy, model: &Model, n_paths: usize, seed: u64) -> Result<VarianceCheck> {
    let out = evaluate_forward(policy, model, n_paths, seed, &EvalOptions::default())?;
    Ok(VarianceCheck {
        var_plain: sample_variance(&out.stopped_payoff),
        var_cv: sample_variance(&out.lower),
    })
}
