//! `nccqr`: simulate data, fit and calibrate bands, evaluate them, select the
//! crossing penalty and reproduce the summary tables.

mod commands;
mod config;
mod tables;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use nccqr::evaluation::Method;

use commands::TestSource;
use config::{read_json, ExperimentConfig, Overrides, Precision, DEFAULT_OUT, OUT_ENV};
use tables::{TableConfig, TableId};

#[derive(Parser)]
#[command(name = "nccqr", version, about = "Non-crossing conformalized quantile regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// Output directory.
    #[arg(long, env = OUT_ENV, default_value = DEFAULT_OUT)]
    out: PathBuf,
    /// Base seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Floating-point precision for training and prediction.
    #[arg(long, value_enum)]
    precision: Option<Precision>,
}

#[derive(Args, Clone, Debug)]
struct MethodArgs {
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Miscoverage level; also resets the quantile levels to (α/2, 1 − α/2).
    #[arg(long)]
    alpha: Option<f64>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: nccqr::Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic data set as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Split, fit the quantile pair and calibrate the band.
    FitCalibrate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        method: MethodArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a saved band, or run every configured replication when no band is given.
    Evaluate {
        /// Band file from `fit-calibrate`.
        #[arg(long)]
        band: Option<PathBuf>,
        /// Experiment config; defaults to the one embedded in the band.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Test observations; defaults to the test part of the configured split.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Response column of `--data`.
        #[arg(long, requires = "data")]
        target: Option<String>,
        #[command(flatten)]
        method: MethodArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Select the crossing penalty by K-fold cross-validation.
    CvLambda {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a summary table's replication grid.
    ReproduceTable {
        #[arg(value_enum)]
        table: TableId,
        /// Fraction of the full replication count.
        #[arg(long, default_value_t = 0.2)]
        scale: f64,
        /// Training settings, and the CSV data sets for S3.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn overrides(common: &Common, method: Option<&MethodArgs>) -> Overrides {
    Overrides {
        seed: common.seed,
        method: method.and_then(|m| m.method),
        alpha: method.and_then(|m| m.alpha),
        precision: common.precision,
    }
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn load(path: &Path, o: &Overrides) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path, o)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, common } => {
            let cfg = load(&config, &overrides(&common, None))?;
            report(&commands::simulate(&cfg, &common.out)?);
        }
        Command::FitCalibrate { config, method, common } => {
            let cfg = load(&config, &overrides(&common, Some(&method)))?;
            report(&commands::fit_calibrate(&cfg, &common.out)?);
        }
        Command::Evaluate {
            band,
            config,
            data,
            target,
            method,
            common,
        } => {
            let o = overrides(&common, Some(&method));
            let paths = match band {
                Some(band_path) => {
                    let doc = commands::read_band(&band_path)?;
                    let cfg = match config {
                        Some(c) => load(&c, &o)?,
                        None => commands::config_from_band(&doc, &o)?,
                    };
                    commands::evaluate_band(&cfg, &doc, &TestSource { csv: data, target }, &common.out)?
                }
                None => {
                    let Some(c) = config else {
                        bail!("evaluate needs --band or --config");
                    };
                    if data.is_some() {
                        bail!("--data applies to a saved band; pass --band");
                    }
                    commands::evaluate_replications(&load(&c, &o)?, &common.out)?
                }
            };
            report(&paths);
        }
        Command::CvLambda { config, alpha, common } => {
            let mut o = overrides(&common, None);
            o.alpha = alpha;
            let cfg = load(&config, &o)?;
            let (lambda, paths) = commands::cv_lambda(&cfg, &common.out)?;
            println!("selected lambda {lambda}");
            report(&paths);
        }
        Command::ReproduceTable {
            table,
            scale,
            config,
            common,
        } => {
            let mut cfg: TableConfig = match config {
                Some(c) => read_json(&c)?,
                None => TableConfig::default(),
            };
            if let Some(p) = common.precision {
                cfg.precision = p;
            }
            let (text, paths) = tables::reproduce(table, scale, common.seed.unwrap_or(0), &cfg, &common.out)?;
            print!("{text}");
            report(&paths);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
