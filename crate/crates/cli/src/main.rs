use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nnstop::market::{simulate, Model, PayoffKind};
use nnstop::oracles::{binomial_bermudan_put, bs_european_put_result, heston_european_put, OracleResult};

mod config;
mod pipeline;
mod report;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "nnstop", version, about = "Bermudan option bounds with neural regressions")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, evaluate and hedge as described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Validate and print the resolved plan without running it.
        #[arg(long)]
        dry_run: bool,
    },
    /// Print the summary table of a completed run.
    Report {
        /// Run directory.
        dir: PathBuf,
    },
    /// Reference prices for the model and payoff of a config.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Binomial tree steps, rounded up to a multiple of the exercise dates.
        #[arg(long, default_value_t = 10_000)]
        tree_steps: usize,
    },
    /// Simulate the training paths of a config and write them to a file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Number of paths (default: method.train_paths).
        #[arg(long)]
        paths: Option<usize>,
    },
}

fn load_config(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seeds.master = s;
    }
    if let Some(o) = out {
        cfg.output.dir = o;
    }
    Ok(cfg)
}

fn oracles(cfg: &RunConfig, tree_steps: usize) -> Result<Vec<OracleResult>> {
    let t = cfg.grid.maturity;
    let k = cfg.payoff.strike;
    match (&cfg.model, cfg.payoff.kind) {
        (Model::Gbm(g), PayoffKind::Put) if g.dim() == 1 => {
            if g.delta[0] != 0.0 {
                bail!("reference pricers assume no dividend yield (model.delta = [0.0])");
            }
            let (s0, r, sigma) = (g.s0[0], g.r, g.sigma[0]);
            let n = cfg.grid.n_exercise;
            let steps = tree_steps.div_ceil(n).max(1) * n;
            Ok(vec![
                bs_european_put_result(s0, k, r, sigma, t),
                binomial_bermudan_put(s0, k, r, sigma, t, n, steps)?,
            ])
        }
        (Model::Heston(h), PayoffKind::Put) => Ok(vec![heston_european_put(h, k, t)?]),
        _ => bail!("no reference pricer for this model and payoff"),
    }
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            dry_run,
        } => {
            let cfg = load_config(&config, seed, out)?;
            if dry_run {
                let plan = pipeline::resolve(&cfg)?;
                println!("{}", serde_json::to_string_pretty(&plan)?);
                return Ok(());
            }
            let dir = pipeline::run(&cfg, &mut std::io::stderr())?;
            print!("{}", report::report(&dir)?);
            eprintln!("artifacts written to {}", dir.display());
        }
        Command::Report { dir } => print!("{}", report::report(&dir)?),
        Command::Oracle { config, tree_steps } => {
            let cfg = load_config(&config, None, None)?;
            cfg.model.validate()?;
            println!("{}", serde_json::to_string_pretty(&oracles(&cfg, tree_steps)?)?);
        }
        Command::Simulate {
            config,
            seed,
            out,
            paths,
        } => {
            let cfg = load_config(&config, seed, None)?;
            cfg.model.validate()?;
            let seeds = pipeline::SeedPlan::new(cfg.seeds.master, 1);
            let n = paths.unwrap_or(cfg.method.train_paths);
            let batch = simulate(&cfg.model, &cfg.grid, n, seeds.train_paths)?;
            batch.write_to(&out)?;
            eprintln!("wrote {n} paths to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
