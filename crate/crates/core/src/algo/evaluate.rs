//! Greedy evaluation of a checkpoint.

use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;

use crate::data::MarketDataset;
use crate::env::{TradeLogRow, TradingEnv};
use crate::metrics::{cumulative_cost, max_drawdown, sharpe, EvaluationReport};
use crate::nets::{forward_eval, Checkpoint, Parameters, Tensor};

use super::buffer::encode_observation;
use super::AlgoError;

pub const EQUITY_HEADER: [&str; 3] = ["step", "date", "portfolio_value"];

/// Everything produced by one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationOutcome {
    pub report: EvaluationReport,
    pub equity: Vec<f64>,
    pub dates: Vec<NaiveDate>,
    pub trade_log: Vec<TradeLogRow>,
    /// Per-ticker average of the action means over the episode.
    pub mean_actions: Vec<f64>,
}

/// Runs one episode from the first day of `ds`, acting with the policy mean.
pub fn evaluate(ck: &Checkpoint, ds: Arc<MarketDataset>) -> Result<EvaluationOutcome, AlgoError> {
    if ds.tickers() != ck.spec.tickers.as_slice() {
        return Err(AlgoError::SpecMismatch(format!(
            "checkpoint trades {} tickers {:?}, dataset has {} {:?}",
            ck.spec.tickers.len(),
            ck.spec.tickers,
            ds.n_tickers(),
            ds.tickers()
        )));
    }
    let spec = &ck.spec.policy;
    if spec.n_actions() != ds.n_tickers() || ck.spec.obs_norm.width() != spec.features() {
        return Err(AlgoError::SpecMismatch(
            "policy width does not match the dataset".into(),
        ));
    }
    let mut env = TradingEnv::new(ds, ck.spec.env.clone())?;
    let mut state = env.reset(0)?;
    let mut obs = vec![0.0f32; spec.obs_len()];
    let mut total_reward = 0.0;
    let mut action_sums = vec![0.0; spec.n_actions()];
    loop {
        encode_observation(spec, &state, &ck.spec.obs_norm, &mut obs);
        let out = forward_eval(
            spec,
            &ck.params,
            Tensor::new(spec.obs_shape(1), obs.clone()),
        )?;
        let mean = &out[0].mean;
        action_sums.iter_mut().zip(mean).for_each(|(s, m)| *s += m);
        let step = env.step(mean)?;
        total_reward += step.reward;
        if step.done {
            break;
        }
        state = step.next_state;
    }
    let steps = env.steps() as f64;
    let equity = env.equity_curve().to_vec();
    let trade_log = env.trade_log().to_vec();
    let costs = cumulative_cost(&trade_log);
    let report = EvaluationReport {
        final_value: *equity.last().expect("non-empty"),
        total_reward,
        sharpe_daily: sharpe(&equity, 0.0, false).ok(),
        sharpe_annual: sharpe(&equity, 0.0, true).ok(),
        total_cost: costs.total_cost,
        n_trades: costs.n_trades,
        max_drawdown: max_drawdown(&equity).unwrap_or(0.0),
    };
    Ok(EvaluationOutcome {
        report,
        dates: env.equity_dates().to_vec(),
        equity,
        trade_log,
        mean_actions: action_sums.into_iter().map(|s| s / steps).collect(),
    })
}

/// Silences the actor head so that every action mean is exactly zero.
pub fn make_hold_only(params: &mut Parameters<f32>) {
    for name in ["actor.weight", "actor.bias"] {
        params.get_mut(name).data_mut().fill(0.0);
    }
}

pub fn write_equity_csv(path: &Path, dates: &[NaiveDate], equity: &[f64]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(std::io::Error::other)?;
    w.write_record(EQUITY_HEADER)
        .map_err(std::io::Error::other)?;
    for (i, (d, v)) in dates.iter().zip(equity).enumerate() {
        w.write_record([i.to_string(), d.to_string(), v.to_string()])
            .map_err(std::io::Error::other)?;
    }
    w.flush()
}

/// Portfolio values from an equity CSV.
pub fn read_equity_csv(path: &Path) -> Result<Vec<f64>, String> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = reader
        .headers()
        .map_err(|e| format!("{}: {e}", path.display()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != EQUITY_HEADER {
        return Err(format!(
            "{}: unexpected header {:?}",
            path.display(),
            headers
        ));
    }
    reader
        .records()
        .enumerate()
        .map(|(i, r)| {
            let r = r.map_err(|e| format!("{}:{}: {e}", path.display(), i + 2))?;
            r[2].parse::<f64>()
                .map_err(|e| format!("{}:{}: {e}", path.display(), i + 2))
        })
        .collect()
}
