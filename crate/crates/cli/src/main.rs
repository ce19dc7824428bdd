//! `cycletree` batch front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cycletree::evaluate::Mode;
use cycletree::resample::Scheme;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "cycletree", version, about = "Trend-cycle decomposition and cycle-augmented tree ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the state-space model and write the smoothed cycle.
    Decompose(Common),
    /// Choose lag order and penalty by jackknife out-of-sample error.
    Select(Common),
    /// Fit a tree ensemble for the first target.
    FitEnsemble(Common),
    /// One-step forecast from a saved ensemble.
    Forecast(Common),
    /// Write a synthetic panel, its vintages and the true cycle.
    Simulate(Common),
    /// Replay vintages and write relative-MSE reports.
    Evaluate(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `pair`, `block:L`, `stationary:L` or `jackknife:fraction`.
    #[arg(long)]
    scheme: Option<String>,
    /// Where jackknife masks apply: `fast` or `full`.
    #[arg(long)]
    mode: Option<String>,
    /// Add the energy-price cycle.
    #[arg(long)]
    extended: bool,
}

impl Common {
    fn resolve(&self) -> cycletree::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(s) = &self.scheme {
            cfg.schemes = vec![Scheme::parse(s)?];
        }
        if let Some(m) = &self.mode {
            cfg.mode = m.parse::<Mode>()?;
        }
        cfg.extended |= self.extended;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> cycletree::Result<()> {
    match cli.command {
        Command::Decompose(c) => commands::decompose(&c.resolve()?),
        Command::Select(c) => commands::select(&c.resolve()?),
        Command::FitEnsemble(c) => commands::fit_ensemble_cmd(&c.resolve()?),
        Command::Forecast(c) => commands::forecast(&c.resolve()?),
        Command::Simulate(c) => commands::simulate(&c.resolve()?),
        Command::Evaluate(c) => commands::evaluate_cmd(&c.resolve()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
