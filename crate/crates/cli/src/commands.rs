//! Implementations of the subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use matrix_trader::algo::{
    evaluate, read_history_csv, sharpe_or_zero, train, write_equity_csv, write_history_csv,
    EvaluationOutcome, HistoryRow, TrainOutcome,
};
use matrix_trader::data::{
    align_and_fill, generate_synthetic_market_with_drift, generate_synthetic_sources,
    load_fundamentals, load_prices, write_fundamentals_csv, write_prices_csv, MarketDataset,
    Regime,
};
use matrix_trader::env::write_trade_log;
use matrix_trader::nets::Checkpoint;
use serde::Serialize;

use crate::config::{AlgoKind, ExperimentConfig, PolicyKind};

pub const CHECKPOINT_FILE: &str = "checkpoint.tar";
pub const HISTORY_FILE: &str = "history.csv";
pub const EQUITY_FILE: &str = "equity.csv";
pub const TRADES_FILE: &str = "trades.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.ini";
pub const REPORT_FILE: &str = "report.json";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MEAN_ACTIONS_FILE: &str = "mean_actions.csv";

/// The four cells of the comparison experiment, in run order.
pub const CELLS: [(PolicyKind, AlgoKind); 4] = [
    (PolicyKind::Cnn, AlgoKind::Ppo),
    (PolicyKind::Cnn, AlgoKind::A2c),
    (PolicyKind::Mlp, AlgoKind::Ppo),
    (PolicyKind::Mlp, AlgoKind::A2c),
];

pub fn cell_name(policy: PolicyKind, algo: AlgoKind) -> String {
    format!("{policy}_{algo}")
}

/// Dataset of an experiment with its train/test split.
#[derive(Debug, Clone)]
pub struct Market {
    pub full: Arc<MarketDataset>,
    pub train: Arc<MarketDataset>,
    pub test: Option<Arc<MarketDataset>>,
    /// Index of the first test day in `full`.
    pub boundary: Option<usize>,
}

/// Loads or generates the dataset named by `[data]` and splits off the
/// trailing `test_fraction` of days.
pub fn load_market(cfg: &ExperimentConfig) -> Result<Market> {
    let d = &cfg.data;
    let full = match &d.path {
        Some(p) => {
            MarketDataset::load(p).with_context(|| format!("loading dataset {}", p.display()))?
        }
        None => generate_synthetic_market_with_drift(
            d.synthetic_seed,
            d.synthetic_days,
            d.synthetic_tickers,
            d.synthetic_regime,
            d.synthetic_drift,
        )
        .context("generating synthetic market")?,
    };
    let n = full.n_days();
    let test_days = (n as f64 * d.test_fraction).round() as usize;
    let full = Arc::new(full);
    if test_days == 0 {
        return Ok(Market {
            train: full.clone(),
            full,
            test: None,
            boundary: None,
        });
    }
    let b = n - test_days;
    Ok(Market {
        train: Arc::new(full.slice_days(0..b)?),
        test: Some(Arc::new(full.slice_days(b..n)?)),
        full,
        boundary: Some(b),
    })
}

pub fn cmd_ingest(
    prices: &Path,
    fundamentals: &Path,
    out: &Path,
    tickers: &[String],
) -> Result<MarketDataset> {
    let loaded = load_prices(prices, tickers)?;
    for t in &loaded.unknown_tickers {
        log::warn!("{}: requested ticker {t} not found", prices.display());
    }
    let funds = load_fundamentals(fundamentals)?;
    let ds = align_and_fill(&loaded.series, &funds)?;
    ds.save(out)
        .with_context(|| format!("writing dataset to {}", out.display()))?;
    log::info!(
        "wrote {} tickers x {} days to {}",
        ds.n_tickers(),
        ds.n_days(),
        out.display()
    );
    Ok(ds)
}

/// Writes a synthetic dataset directory, and optionally the raw price and
/// fundamentals CSVs it was built from.
pub fn cmd_synth(
    out: &Path,
    seed: u64,
    days: usize,
    tickers: usize,
    regime: Regime,
    raw: Option<&Path>,
) -> Result<MarketDataset> {
    let src = generate_synthetic_sources(seed, days, tickers, regime)?;
    if let Some(dir) = raw {
        fs::create_dir_all(dir)?;
        write_prices_csv(&dir.join("prices.csv"), &src.prices)?;
        write_fundamentals_csv(&dir.join("fundamentals.csv"), &src.fundamentals)?;
    }
    let ds = align_and_fill(&src.prices, &src.fundamentals)?;
    ds.save(out)
        .with_context(|| format!("writing dataset to {}", out.display()))?;
    log::info!(
        "wrote synthetic {regime} market ({tickers} tickers, {days} days) to {}",
        out.display()
    );
    Ok(ds)
}

/// Trains one policy/algorithm pair into `dir`.
fn run_cell(
    cfg: &ExperimentConfig,
    market: &Market,
    policy: PolicyKind,
    algo_kind: AlgoKind,
    horizon: Option<usize>,
    dir: &Path,
) -> Result<TrainOutcome> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let spec = cfg.policy_spec(policy, market.train.n_tickers());
    let mut algo = cfg.algo_config(algo_kind);
    if let Some(h) = horizon {
        algo.set_horizon(h);
    }
    let name = cell_name(policy, algo_kind);
    let outcome = train(
        market.train.clone(),
        &cfg.env,
        &spec,
        &algo,
        &cfg.train_config(),
        market.boundary,
        |row| {
            log::info!(
                "[{name}] update {} steps {} reward {:.6} value {:.2} sharpe {:.3}",
                row.update_idx,
                row.env_steps,
                row.episode_reward,
                row.portfolio_value,
                row.sharpe
            )
        },
    )?;
    outcome.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    write_history_csv(&dir.join(HISTORY_FILE), &outcome.history)?;
    let ep = &outcome.last_episode;
    write_equity_csv(&dir.join(EQUITY_FILE), &ep.dates, &ep.equity)?;
    write_trade_log(&dir.join(TRADES_FILE), &ep.trade_log)?;
    Ok(outcome)
}

/// Trains the configured policy and algorithm.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainOutcome> {
    let market = load_market(cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(RESOLVED_CONFIG_FILE), cfg.to_ini_string())?;
    let outcome = run_cell(cfg, &market, cfg.policy.kind, cfg.algo.kind, None, out)?;
    log::info!(
        "wrote {} updates to {}",
        outcome.history.len(),
        out.display()
    );
    Ok(outcome)
}

/// Which days of a dataset to evaluate on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Test,
    All,
}

pub fn cmd_evaluate(
    checkpoint: &Path,
    dataset: Arc<MarketDataset>,
    split: Split,
    out: &Path,
) -> Result<EvaluationOutcome> {
    let ck = Checkpoint::load(checkpoint)?;
    let n = dataset.n_days();
    let range = match (split, ck.meta.split_boundary) {
        (Split::All, _) => 0..n,
        (Split::Train, Some(b)) => 0..b.min(n),
        (Split::Test, Some(b)) => b.min(n)..n,
        (_, None) => {
            log::warn!("checkpoint has no train/test boundary; evaluating on all days");
            0..n
        }
    };
    let ds = if range == (0..n) {
        dataset
    } else {
        Arc::new(dataset.slice_days(range)?)
    };
    let outcome = evaluate(&ck, ds)?;
    fs::create_dir_all(out)?;
    fs::write(
        out.join(REPORT_FILE),
        serde_json::to_string_pretty(&outcome.report)? + "\n",
    )?;
    write_equity_csv(&out.join(EQUITY_FILE), &outcome.dates, &outcome.equity)?;
    write_trade_log(&out.join(TRADES_FILE), &outcome.trade_log)?;
    let mut w = csv::Writer::from_path(out.join(MEAN_ACTIONS_FILE))?;
    w.write_record(["ticker", "mean_action"])?;
    for (t, a) in ck.spec.tickers.iter().zip(&outcome.mean_actions) {
        w.write_record([t.clone(), a.to_string()])?;
    }
    w.flush()?;
    Ok(outcome)
}

#[derive(Debug, Serialize)]
struct ManifestCell {
    name: String,
    policy: String,
    algo: String,
    dir: PathBuf,
    updates: usize,
}

#[derive(Debug, Serialize)]
struct Manifest {
    complete: bool,
    cells: Vec<ManifestCell>,
    failed: Option<String>,
}

fn write_manifest(out: &Path, m: &Manifest) -> Result<()> {
    fs::write(
        out.join(MANIFEST_FILE),
        serde_json::to_string_pretty(m)? + "\n",
    )?;
    Ok(())
}

/// Header of `comparison.csv` for the cells in [`CELLS`].
pub fn comparison_header() -> Vec<String> {
    let mut h = vec!["update_idx".to_string(), "env_steps".to_string()];
    for (p, a) in CELLS {
        let name = cell_name(p, a);
        for col in ["episode_reward", "portfolio_value", "sharpe", "total_cost"] {
            h.push(format!("{name}_{col}"));
        }
    }
    h
}

fn write_comparison(path: &Path, histories: &[Vec<HistoryRow>]) -> Result<()> {
    let rows = histories[0].len();
    if histories.iter().any(|h| h.len() != rows) {
        bail!("cells produced different numbers of updates");
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(comparison_header())?;
    for i in 0..rows {
        let steps = histories[0][i].env_steps;
        if histories.iter().any(|h| h[i].env_steps != steps) {
            bail!("cells disagree on env_steps at update {}", i + 1);
        }
        let mut rec = vec![histories[0][i].update_idx.to_string(), steps.to_string()];
        for h in histories {
            let r = &h[i];
            rec.extend([
                r.episode_reward.to_string(),
                r.portfolio_value.to_string(),
                r.sharpe.to_string(),
                r.total_cost.to_string(),
            ]);
        }
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Trains every policy/algorithm cell with a shared seed, environment and
/// rollout horizon, then joins their histories.
pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let market = load_market(cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(RESOLVED_CONFIG_FILE), cfg.to_ini_string())?;
    let mut manifest = Manifest {
        complete: false,
        cells: Vec::new(),
        failed: None,
    };
    write_manifest(out, &manifest)?;
    let mut histories = Vec::new();
    for (policy, algo) in CELLS {
        let name = cell_name(policy, algo);
        let dir = out.join(&name);
        match run_cell(cfg, &market, policy, algo, Some(cfg.compare.horizon), &dir) {
            Ok(outcome) => {
                manifest.cells.push(ManifestCell {
                    name,
                    policy: policy.to_string(),
                    algo: algo.to_string(),
                    dir: PathBuf::from(cell_name(policy, algo)),
                    updates: outcome.history.len(),
                });
                write_manifest(out, &manifest)?;
                histories.push(outcome.history);
            }
            Err(e) => {
                manifest.failed = Some(format!("{name}: {e:#}"));
                write_manifest(out, &manifest)?;
                return Err(e.context(format!("cell {name} failed")));
            }
        }
    }
    write_comparison(&out.join(COMPARISON_FILE), &histories)?;
    manifest.complete = true;
    write_manifest(out, &manifest)?;
    log::info!(
        "comparison written to {}",
        out.join(COMPARISON_FILE).display()
    );
    Ok(())
}

/// Recomputes a cell's final Sharpe and cost from its equity and trade files.
pub fn recompute_cell_summary(dir: &Path) -> Result<(f64, f64)> {
    let equity =
        matrix_trader::algo::read_equity_csv(&dir.join(EQUITY_FILE)).map_err(anyhow::Error::msg)?;
    let trades =
        matrix_trader::env::read_trade_log(&dir.join(TRADES_FILE)).map_err(anyhow::Error::msg)?;
    Ok((
        sharpe_or_zero(&equity),
        matrix_trader::metrics::cumulative_cost(&trades).total_cost,
    ))
}

/// Last history row of a cell directory.
pub fn last_history_row(dir: &Path) -> Result<HistoryRow> {
    read_history_csv(&dir.join(HISTORY_FILE))
        .map_err(anyhow::Error::msg)?
        .pop()
        .context("empty history")
}
