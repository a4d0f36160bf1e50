use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cumulant_cli::cache::load_or_derive;
use cumulant_cli::config::RunConfig;
use cumulant_cli::scenario::prepare;
use cumulant_cli::table::recompute_table;
use cumulant_cli::{run_scenario, run_sweep};

#[derive(Parser)]
#[command(name = "cumulant", version, about = "Cumulant-expansion dynamics of coupled two-level systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario: all orders, the exact reference and error tables.
    Run(Overrides),
    /// Sweep a chain parameter and write a long-format dataset.
    Sweep(Overrides),
    /// Derive the closed equation system for one order and print it.
    Derive {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        order: usize,
    },
    /// Recompute the error table from the files of a finished run.
    Table {
        /// Output directory of the run.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct Overrides {
    /// TOML configuration; a run sidecar works too.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Comma-separated cumulant orders.
    #[arg(long, value_delimiter = ',')]
    orders: Option<Vec<usize>>,
    /// Grid intervals M.
    #[arg(short, long)]
    m: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    abs_tol: Option<f64>,
    #[arg(long)]
    divergence_bound: Option<f64>,
    /// Worker threads (0 = all cores).
    #[arg(short, long)]
    workers: Option<usize>,
    /// Skip the exact reference solver.
    #[arg(long)]
    no_exact: bool,
}

impl Overrides {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if let Some(o) = &self.orders {
            cfg.orders = o.clone();
        }
        if let Some(m) = self.m {
            cfg.m = m;
        }
        if let Some(v) = self.rel_tol {
            cfg.integrator.rel_tol = v;
        }
        if let Some(v) = self.abs_tol {
            cfg.integrator.abs_tol = v;
        }
        if let Some(v) = self.divergence_bound {
            cfg.integrator.divergence_bound = v;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if self.no_exact {
            cfg.exact = false;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(o) => {
            let out = run_scenario(&o.load()?)?;
            print!("{}", out.report);
            println!("\noutput written to {}", out.config.output.display());
        }
        Command::Sweep(o) => {
            let cfg = o.load()?;
            let out = run_sweep(&cfg)?;
            let failed = out.cells.iter().filter(|c| !c.result.is_completed()).count();
            println!("{} cells, {} not completed; output in {}", out.cells.len(), failed, cfg.output.display());
        }
        Command::Derive { overrides, order } => {
            let mut cfg = overrides.load()?;
            cfg.orders = vec![order];
            cfg.resolve()?;
            cfg.validate()?;
            let prep = prepare(&cfg)?;
            let cache = cfg.cache_dir.clone();
            let (ms, _) = load_or_derive(&prep.sys, order, cache.as_deref()).context("derivation failed")?;
            match overrides.out {
                Some(p) => std::fs::write(&p, ms.to_text()).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{}", ms.to_text()),
            }
        }
        Command::Table { dir } => print!("{}", recompute_table(&dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
