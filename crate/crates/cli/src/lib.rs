//! Command-line driver: ingestion, synthetic data, training, evaluation and
//! the CNN-versus-MLP comparison. All curve data is written as CSV.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use matrix_trader::data::{MarketDataset, Regime};

use commands::Split;
use config::ExperimentConfig;

/// Environment variable holding the log filter (e.g. `debug`).
pub const LOG_ENV: &str = "MATRIX_TRADER_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "matrix-trader",
    version,
    about = "Matrix-state deep RL stock trading"
)]
pub struct Cli {
    /// Only log errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment config file (INI).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ExperimentArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dataset directory from price and fundamentals CSVs.
    Ingest {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        fundamentals: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated tickers to keep (default: all).
        #[arg(long, value_delimiter = ',')]
        tickers: Vec<String>,
    },
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        days: usize,
        #[arg(long, default_value_t = 30)]
        tickers: usize,
        #[arg(long, default_value = "mixed")]
        regime: Regime,
        /// Also write the raw prices.csv and fundamentals.csv here.
        #[arg(long)]
        raw: Option<PathBuf>,
    },
    /// Train one policy and write checkpoint, history and curves.
    Train(ExperimentArgs),
    /// Greedy evaluation of a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; defaults to the `[data]` section of --config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train CNN and MLP policies with PPO and A2C and join their histories.
    Compare(ExperimentArgs),
}

pub fn init_logging(quiet: bool) {
    let default = if quiet { "error" } else { "info" };
    let mut builder =
        env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, default));
    if quiet {
        builder.filter_level(log::LevelFilter::Error);
    }
    let _ = builder.format_timestamp(None).try_init();
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            prices,
            fundamentals,
            out,
            tickers,
        } => {
            commands::cmd_ingest(&prices, &fundamentals, &out, &tickers)?;
        }
        Command::Synth {
            out,
            seed,
            days,
            tickers,
            regime,
            raw,
        } => {
            commands::cmd_synth(&out, seed, days, tickers, regime, raw.as_deref())?;
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            commands::cmd_train(&cfg, &cfg.out_dir)?;
        }
        Command::Evaluate {
            checkpoint,
            dataset,
            config,
            split,
            out,
        } => {
            let ds = match (dataset, config) {
                (Some(d), _) => MarketDataset::load(&d)
                    .with_context(|| format!("loading dataset {}", d.display()))?,
                (None, Some(c)) => {
                    let cfg = ExperimentConfig::load(&c)?;
                    (*commands::load_market(&cfg)?.full).clone()
                }
                (None, None) => anyhow::bail!("evaluate needs --dataset or --config"),
            };
            let outcome =
                commands::cmd_evaluate(&checkpoint, std::sync::Arc::new(ds), split, &out)?;
            println!("{}", serde_json::to_string_pretty(&outcome.report)?);
        }
        Command::Compare(args) => {
            let cfg = args.resolve()?;
            commands::cmd_compare(&cfg, &cfg.out_dir)?;
        }
    }
    Ok(())
}
