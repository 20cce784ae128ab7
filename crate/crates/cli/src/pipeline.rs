//! simulate, train, evaluate and hedge, writing every artifact to one
//! directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use nnstop::evaluation::{estimate_bounds, hedging_errors, EvalOptions};
use nnstop::market::simulate;
use nnstop::method_one::train_method_one;
use nnstop::method_two::{train_method_two, TrainingData};
use nnstop::rng::{derive_seed, purpose};
use nnstop::Error;
use serde::{Deserialize, Serialize};

use crate::config::{Plan, RunConfig};
use crate::report::{write_summaries, RunInfo};

pub const RUN_SCHEMA_VERSION: u32 = 1;

/// Seeds fanned out from the master seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub master: u64,
    pub train_paths: u64,
    pub training: u64,
    pub evaluation: Vec<u64>,
    pub hedging: u64,
}

impl SeedPlan {
    pub fn new(master: u64, n_repeats: usize) -> SeedPlan {
        SeedPlan {
            master,
            train_paths: derive_seed(master, purpose::TRAIN_PATHS, 0),
            training: master,
            evaluation: (0..n_repeats as u64)
                .map(|r| derive_seed(master, purpose::EVAL_REPEAT, r))
                .collect(),
            hedging: derive_seed(master, purpose::HEDGING, 0),
        }
    }
}

/// Everything a run will do, printed by `--dry-run`.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedPlan<'a> {
    pub config: &'a RunConfig,
    pub training: Plan,
    pub seeds: SeedPlan,
}

pub fn resolve(cfg: &RunConfig) -> Result<ResolvedPlan<'_>> {
    let training = cfg.plan()?;
    Ok(ResolvedPlan {
        config: cfg,
        training,
        seeds: SeedPlan::new(cfg.seeds.master, cfg.evaluation.n_repeats),
    })
}

/// Artifact file names inside a run directory.
pub mod files {
    pub const CONFIG: &str = "config.toml";
    pub const POLICY_DIR: &str = "policy";
    pub const DIAGNOSTICS: &str = "diagnostics.csv";
    pub const BOUNDS: &str = "bounds.json";
    pub const HEDGE: &str = "hedge.json";
    pub const HEDGE_HISTOGRAM: &str = "hedge_histogram.csv";
    pub const RUN_INFO: &str = "run.json";
    pub const SUMMARY_CSV: &str = "summary.csv";
    pub const SUMMARY_MD: &str = "summary.md";
}

/// Run the whole pipeline. Returns the artifact directory.
pub fn run(cfg: &RunConfig, log: &mut dyn std::io::Write) -> Result<PathBuf> {
    let plan = resolve(cfg)?;
    let out = cfg.output.dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(files::CONFIG), toml::to_string(cfg)?)?;

    let start = Instant::now();
    let seeds = &plan.seeds;
    let (policy, diag, variations) = match &plan.training {
        Plan::One(mc) => {
            writeln!(log, "simulating {} training paths", cfg.method.train_paths)?;
            let paths = simulate(&cfg.model, &cfg.grid, cfg.method.train_paths, seeds.train_paths)?;
            writeln!(log, "training method one over {} dates", cfg.grid.n_exercise)?;
            let (p, d) = train_method_one(&cfg.model, &paths, &cfg.payoff, &cfg.grid, mc, seeds.training)
                .map_err(|e| divergence_hint(e, &out))?;
            (p, d, mc.variations(&cfg.grid))
        }
        Plan::Two(mc) => {
            let paths = if mc.alternation.fresh_data.is_none() {
                writeln!(log, "simulating {} training paths", cfg.method.train_paths)?;
                Some(simulate(&cfg.model, &cfg.grid, cfg.method.train_paths, seeds.train_paths)?)
            } else {
                None
            };
            let data = match &paths {
                Some(p) => TrainingData::Fixed(p),
                None => TrainingData::Fresh,
            };
            writeln!(log, "training method two")?;
            let (p, d) = train_method_two(&cfg.model, data, &cfg.payoff, &cfg.grid, mc, seeds.training)
                .map_err(|e| divergence_hint(e, &out))?;
            (p, d, mc.variations(&cfg.grid))
        }
    };
    let train_secs = start.elapsed().as_secs_f64();
    policy.save(out.join(files::POLICY_DIR), &cfg.model, &variations)?;
    diag.write_csv(out.join(files::DIAGNOSTICS))?;

    writeln!(
        log,
        "evaluating on {} paths x {} repeats",
        cfg.evaluation.n_eval, cfg.evaluation.n_repeats
    )?;
    let opts = EvalOptions {
        rule: cfg.evaluation.rule,
        rebalance: cfg.evaluation.rebalance,
        ..EvalOptions::default()
    };
    let bounds = estimate_bounds(&policy, &cfg.model, cfg.evaluation.n_eval, &seeds.evaluation, &opts)?;
    fs::write(out.join(files::BOUNDS), serde_json::to_string_pretty(&bounds)?)?;

    if cfg.evaluation.hedging {
        let n = cfg.evaluation.hedge_paths.unwrap_or(cfg.evaluation.n_eval);
        writeln!(log, "hedging on {n} paths")?;
        let hedge = hedging_errors(
            &policy,
            &cfg.model,
            n,
            seeds.hedging,
            bounds.lower_mean,
            cfg.evaluation.rebalance,
        )?;
        fs::write(out.join(files::HEDGE), serde_json::to_string(&hedge)?)?;
        hedge.write_histogram_csv(out.join(files::HEDGE_HISTOGRAM))?;
    }

    let info = RunInfo {
        schema_version: RUN_SCHEMA_VERSION,
        method: cfg.method.kind,
        variations,
        variables: policy.param_count(),
        total_epochs: diag.total_epochs(),
        in_sample_lower: diag.in_sample_lower,
        in_sample_upper: diag.in_sample_upper,
        train_secs,
        total_secs: start.elapsed().as_secs_f64(),
        seeds: seeds.clone(),
    };
    fs::write(out.join(files::RUN_INFO), serde_json::to_string_pretty(&info)?)?;
    write_summaries(&out, &info, &bounds)?;
    Ok(out)
}

fn divergence_hint(e: Error, out: &Path) -> anyhow::Error {
    let hint = matches!(e, Error::Divergence { .. }).then(|| {
        format!(
            "training diverged; lower method.train.learning_rate or inspect partial output in {}",
            out.display()
        )
    });
    let err = anyhow::Error::new(e);
    match hint {
        Some(h) => err.context(h),
        None => err,
    }
}
