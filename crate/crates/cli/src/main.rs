//! Command-line front end of the CVA sensitivities lab.

mod config;
mod run;
mod summary;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xvasensi::sensitivities::Method;

use run::Run;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl From<xvasensi::Error> for CliError {
    fn from(e: xvasensi::Error) -> Self {
        use xvasensi::Error as E;
        match e {
            E::Singular(_) | E::NoConvergence(_) | E::Diverged(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "xvasensi", version, about = "Monte Carlo CVA sensitivities, risk and hedging lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config, or a previous run's manifest.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set experiment.t=0.5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides seeds.simulation.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Sensitivity method: benchmark, linear, smart, aad or naive-aad.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Basket option Greeks against the closed form.
    BsBench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
    },
    /// CVA lab experiments.
    Cva {
        #[command(subcommand)]
        op: CvaOp,
    },
    /// Summarize a run directory.
    Report { run_dir: PathBuf },
}

#[derive(Subcommand)]
enum CvaOp {
    Price(Common),
    BumpSensis(Common),
    MarketSensis(Common),
    Learn(Common),
    Twin(Common),
    RiskRunoff(Common),
    RiskRunon(Common),
    HedgeBacktest(Common),
}

fn prepare(c: &Common, extra: &[String]) -> Result<config::RunConfig, CliError> {
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let mut sets = c.sets.clone();
    sets.extend_from_slice(extra);
    let mut cfg = config::load(c.config.as_deref(), &sets)?;
    if let Some(s) = c.seed {
        cfg.seeds.simulation = s;
    }
    Ok(cfg)
}

fn method_of(c: &Common, default: Method) -> Result<Method, CliError> {
    match &c.method {
        None => Ok(default),
        Some(s) => Method::from_tag(s).ok_or_else(|| CliError::Config(format!("unknown method {s:?}"))),
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Report { run_dir } => {
            print!("{}", summary::render(&run_dir)?);
            Ok(())
        }
        Command::BsBench { common, d, m } => {
            let mut extra = Vec::new();
            if let Some(d) = d {
                extra.push(format!("basket.d={d}"));
            }
            if let Some(m) = m {
                extra.push(format!("basket.m={m}"));
            }
            let mut cfg = prepare(&common, &extra)?;
            cfg.basket.method = method_of(&common, cfg.basket.method)?;
            let mut r = Run::new(&common.out, "bs-bench", cfg)?;
            run::bs_bench(&mut r)?;
            r.finish()?;
            Ok(())
        }
        Command::Cva { op } => {
            let (name, c) = match &op {
                CvaOp::Price(c) => ("cva price", c),
                CvaOp::BumpSensis(c) => ("cva bump-sensis", c),
                CvaOp::MarketSensis(c) => ("cva market-sensis", c),
                CvaOp::Learn(c) => ("cva learn", c),
                CvaOp::Twin(c) => ("cva twin", c),
                CvaOp::RiskRunoff(c) => ("cva risk-runoff", c),
                CvaOp::RiskRunon(c) => ("cva risk-runon", c),
                CvaOp::HedgeBacktest(c) => ("cva hedge-backtest", c),
            };
            let mut cfg = prepare(c, &[])?;
            cfg.experiment.method = method_of(c, cfg.experiment.method)?;
            let method = cfg.experiment.method;
            let mut r = Run::new(&c.out, name, cfg)?;
            match op {
                CvaOp::Price(_) => run::price(&mut r)?,
                CvaOp::BumpSensis(_) => run::bump_sensis(&mut r, method)?,
                CvaOp::MarketSensis(_) => run::market_sensis(&mut r, method)?,
                CvaOp::Learn(_) => run::learn(&mut r)?,
                CvaOp::Twin(_) => run::twin(&mut r)?,
                CvaOp::RiskRunoff(_) => run::risk_runoff(&mut r)?,
                CvaOp::RiskRunon(_) => run::risk_runon(&mut r, method)?,
                CvaOp::HedgeBacktest(_) => run::hedge_backtest(&mut r, method)?,
            }
            r.finish()?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
    }
}
