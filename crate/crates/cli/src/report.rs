//! Summary tables built from stored run artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nnstop::evaluation::BoundsEstimate;
use serde::{Deserialize, Serialize};

use crate::config::MethodKind;
use crate::pipeline::{files, SeedPlan, RUN_SCHEMA_VERSION};

/// Run metadata stored next to the bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub schema_version: u32,
    pub method: MethodKind,
    pub variations: Vec<u8>,
    pub variables: usize,
    pub total_epochs: usize,
    pub in_sample_lower: f64,
    pub in_sample_upper: f64,
    pub train_secs: f64,
    pub total_secs: f64,
    pub seeds: SeedPlan,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn method_label(info: &RunInfo) -> String {
    let m = match info.method {
        MethodKind::One => "I",
        MethodKind::Two => "II",
    };
    let v: Vec<String> = info.variations.iter().map(u8::to_string).collect();
    if v.is_empty() {
        m.to_string()
    } else {
        format!("{m} (V{})", v.join("+"))
    }
}

/// CSV summary without timing, so repeated runs give identical bytes.
pub fn summary_csv(info: &RunInfo, b: &BoundsEstimate) -> String {
    let mut s = String::from(
        "method,variables,lb_mean,lb_sd,lb_se,ub_mean,ub_sd,ub_se,diff_mean,diff_sd,diff_se,n_eval,n_repeats\n",
    );
    let _ = writeln!(
        s,
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        method_label(info),
        info.variables,
        b.lower_mean,
        opt(b.lower_sd),
        b.lower_se,
        b.upper_mean,
        opt(b.upper_sd),
        b.upper_se,
        b.gap_mean,
        opt(b.gap_sd),
        b.gap_se,
        b.n_eval,
        b.n_repeats
    );
    s
}

/// Markdown table in the layout of the usual bounds tables, with timing.
pub fn summary_markdown(info: &RunInfo, b: &BoundsEstimate) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| Method | Variables | Time (s) | LB mean | LB S.D. | UB mean | UB S.D. | Diff mean | Diff S.D. |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
    let _ = writeln!(
        s,
        "| {} | {} | {:.1} | {} | {} | {} | {} | {} | {} |",
        method_label(info),
        info.variables,
        info.total_secs,
        b.lower_mean,
        opt(b.lower_sd),
        b.upper_mean,
        opt(b.upper_sd),
        b.gap_mean,
        opt(b.gap_sd)
    );
    let _ = writeln!(
        s,
        "\nStandard errors: LB {}, UB {}, Diff {} ({} paths x {} repeats).",
        b.lower_se, b.upper_se, b.gap_se, b.n_eval, b.n_repeats
    );
    s
}

pub fn write_summaries(dir: &Path, info: &RunInfo, b: &BoundsEstimate) -> Result<()> {
    fs::write(dir.join(files::SUMMARY_CSV), summary_csv(info, b))?;
    fs::write(dir.join(files::SUMMARY_MD), summary_markdown(info, b))?;
    Ok(())
}

/// Load the stored artifacts of a run directory.
pub fn load(dir: &Path) -> Result<(RunInfo, BoundsEstimate)> {
    let read = |name: &str| -> Result<String> {
        let p = dir.join(name);
        fs::read_to_string(&p).with_context(|| format!("missing artifact {}", p.display()))
    };
    let info: RunInfo =
        serde_json::from_str(&read(files::RUN_INFO)?).with_context(|| format!("corrupt {}", files::RUN_INFO))?;
    let bounds: BoundsEstimate =
        serde_json::from_str(&read(files::BOUNDS)?).with_context(|| format!("corrupt {}", files::BOUNDS))?;
    if info.schema_version != RUN_SCHEMA_VERSION {
        bail!("unsupported {} schema version {}", files::RUN_INFO, info.schema_version);
    }
    if bounds.schema_version != nnstop::evaluation::REPORT_SCHEMA_VERSION {
        bail!("unsupported {} schema version {}", files::BOUNDS, bounds.schema_version);
    }
    Ok((info, bounds))
}

/// Render the summary table of a completed run.
pub fn report(dir: &Path) -> Result<String> {
    let (info, bounds) = load(dir)?;
    Ok(summary_markdown(&info, &bounds))
}
