//! Per-episode trade log in CSV form.

use std::path::Path;

use serde::{Deserialize, Serialize};

pub const TRADE_LOG_HEADER: [&str; 8] = [
    "step",
    "date",
    "ticker",
    "delta_shares",
    "price",
    "cost",
    "balance_after",
    "value_after",
];

/// One executed order. `value_after` is the portfolio value at the trade
/// day's prices immediately after this order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeLogRow {
    pub step: usize,
    pub date: chrono::NaiveDate,
    pub ticker: String,
    pub delta_shares: i64,
    pub price: f64,
    pub cost: f64,
    pub balance_after: f64,
    pub value_after: f64,
}

pub fn write_trade_log(path: &Path, rows: &[TradeLogRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(std::io::Error::other)?;
    w.write_record(TRADE_LOG_HEADER)
        .map_err(std::io::Error::other)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.date.to_string(),
            r.ticker.clone(),
            r.delta_shares.to_string(),
            r.price.to_string(),
            r.cost.to_string(),
            r.balance_after.to_string(),
            r.value_after.to_string(),
        ])
        .map_err(std::io::Error::other)?;
    }
    w.flush()
}

/// Reads a trade log, failing on any malformed row.
pub fn read_trade_log(path: &Path) -> Result<Vec<TradeLogRow>, String> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = reader
        .headers()
        .map_err(|e| format!("{}: {e}", path.display()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != TRADE_LOG_HEADER {
        return Err(format!(
            "{}: unexpected header {:?}",
            path.display(),
            headers
        ));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| format!("{}:{}: {e}", path.display(), i + 2)))
        .collect()
}
