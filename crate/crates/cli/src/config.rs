//! Run configuration (TOML) and its validation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nnstop::evaluation::Rebalance;
use nnstop::market::{Model, Payoff, TimeGrid};
use nnstop::method_one::MethodOneConfig;
use nnstop::method_two::{AlternationConfig, FreshData, MethodTwoConfig, TimeSubset};
use nnstop::nn::{NetConfig, TrainConfig};
use nnstop::policy::ExerciseRule;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Model,
    pub grid: TimeGrid,
    pub payoff: Payoff,
    pub method: MethodSection,
    pub evaluation: EvaluationSection,
    pub seeds: SeedSection,
    pub output: OutputSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    One,
    Two,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    /// Hidden widths of the shared trunk (without variation 5).
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    /// Hidden widths of the continuation network (variation 5).
    #[serde(default)]
    pub phi_hidden: Option<Vec<usize>>,
    /// Hidden widths of the increment network (variation 5).
    #[serde(default)]
    pub psi_hidden: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlternationSection {
    #[serde(default = "one")]
    pub epochs_per_update: usize,
    #[serde(default = "eight")]
    pub stagnation_patience: usize,
    #[serde(default)]
    pub max_updates: Option<usize>,
    #[serde(default = "two_hundred")]
    pub max_rounds: usize,
    #[serde(default = "ten_thousand")]
    pub validation_paths: usize,
    #[serde(default)]
    pub time_subset: TimeSubset,
    #[serde(default)]
    pub fresh_data: Option<FreshData>,
}

fn one() -> usize {
    1
}
fn eight() -> usize {
    8
}
fn two_hundred() -> usize {
    200
}
fn ten_thousand() -> usize {
    10_000
}

impl Default for AlternationSection {
    fn default() -> Self {
        let d = AlternationConfig::default();
        AlternationSection {
            epochs_per_update: d.epochs_per_update,
            stagnation_patience: d.stagnation_patience,
            max_updates: d.max_updates,
            max_rounds: d.max_rounds,
            validation_paths: d.validation_paths,
            time_subset: d.time_subset,
            fresh_data: d.fresh_data,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub kind: MethodKind,
    /// Active algorithm variations, numbered 1 to 6.
    #[serde(default)]
    pub variations: Vec<u8>,
    /// Fixed training paths; unused with fresh data.
    #[serde(default)]
    pub train_paths: usize,
    pub net: NetSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub alternation: Option<AlternationSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub n_eval: usize,
    #[serde(default = "one")]
    pub n_repeats: usize,
    #[serde(default)]
    pub rule: ExerciseRule,
    #[serde(default)]
    pub rebalance: Rebalance,
    #[serde(default)]
    pub hedging: bool,
    /// Paths for the hedging experiment; defaults to `n_eval`.
    #[serde(default)]
    pub hedge_paths: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    pub master: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

/// Training setup resolved from a validated config.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Plan {
    One(MethodOneConfig),
    Two(MethodTwoConfig),
}

fn variation_name(v: u8) -> &'static str {
    match v {
        1 => "warm start",
        2 => "time subset",
        3 => "fresh data",
        4 => "second martingale term",
        5 => "separate networks",
        6 => "substeps",
        _ => "unknown",
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        RunConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Check every section and resolve the training plan.
    pub fn plan(&self) -> Result<Plan> {
        self.model.validate()?;
        self.grid.validate()?;
        self.payoff.check_dim(self.model.d_assets())?;
        let m = &self.method;
        let vars: BTreeSet<u8> = m.variations.iter().copied().collect();
        if vars.len() != m.variations.len() {
            bail!("method.variations: duplicate entries");
        }
        for &v in &vars {
            if !(1..=6).contains(&v) {
                bail!("method.variations: unknown variation {v}, expected 1 to 6");
            }
            let illegal = matches!((m.kind, v), (MethodKind::Two, 1) | (MethodKind::One, 2 | 3));
            if illegal {
                let kind = match m.kind {
                    MethodKind::One => "one",
                    MethodKind::Two => "two",
                };
                bail!(
                    "method.variations: variation {v} ({}) is not available with method {kind}",
                    variation_name(v)
                );
            }
        }
        if vars.contains(&6) != (self.grid.substeps > 1) {
            bail!("method.variations: variation 6 must be listed exactly when grid.substeps > 1");
        }
        let second = vars.contains(&4);
        let net = if vars.contains(&5) {
            if m.net.hidden.is_some() {
                bail!("method.net.hidden: not used with variation 5; set phi_hidden and psi_hidden");
            }
            let phi = m.net.phi_hidden.as_ref().context("method.net.phi_hidden: required with variation 5")?;
            let psi = m.net.psi_hidden.as_ref().context("method.net.psi_hidden: required with variation 5")?;
            NetConfig::separate(phi, psi, second)
        } else {
            if m.net.phi_hidden.is_some() || m.net.psi_hidden.is_some() {
                bail!("method.net.phi_hidden: separate networks need variation 5");
            }
            let h = m.net.hidden.as_ref().context("method.net.hidden: required without variation 5")?;
            NetConfig::shared(h, second)
        };
        m.train.validate().context("method.train")?;
        if self.evaluation.n_eval == 0 {
            bail!("evaluation.n_eval: must be at least 1");
        }
        if self.evaluation.n_repeats == 0 {
            bail!("evaluation.n_repeats: must be at least 1");
        }
        if self.evaluation.hedge_paths == Some(0) {
            bail!("evaluation.hedge_paths: must be at least 1");
        }
        match m.kind {
            MethodKind::One => {
                if m.alternation.is_some() {
                    bail!("method.alternation: only used with method two");
                }
                if m.train_paths < 2 {
                    bail!("method.train_paths: need at least 2 paths");
                }
                Ok(Plan::One(MethodOneConfig {
                    net,
                    train: m.train.clone(),
                    warm_start: vars.contains(&1),
                }))
            }
            MethodKind::Two => {
                let a = m.alternation.clone().unwrap_or_default();
                if vars.contains(&2) == (a.time_subset == TimeSubset::All) {
                    bail!("method.alternation.time_subset: must be set exactly when variation 2 is listed");
                }
                if vars.contains(&3) != a.fresh_data.is_some() {
                    bail!("method.alternation.fresh_data: must be set exactly when variation 3 is listed");
                }
                if !vars.contains(&3) && m.train_paths < 2 {
                    bail!("method.train_paths: need at least 2 paths");
                }
                let alternation = AlternationConfig {
                    epochs_per_update: a.epochs_per_update,
                    stagnation_patience: a.stagnation_patience,
                    max_updates: a.max_updates,
                    max_rounds: a.max_rounds,
                    validation_paths: a.validation_paths,
                    time_subset: a.time_subset,
                    fresh_data: a.fresh_data,
                };
                alternation
                    .validate(self.grid.n_exercise)
                    .context("method.alternation")?;
                Ok(Plan::Two(MethodTwoConfig {
                    net,
                    train: m.train.clone(),
                    alternation,
                }))
            }
        }
    }
}
