//! Per-update training history and its CSV form.

use std::path::Path;

use serde::{Deserialize, Serialize};

pub const HISTORY_HEADER: [&str; 7] = [
    "update_idx",
    "env_steps",
    "episode_reward",
    "portfolio_value",
    "sharpe",
    "total_cost",
    "mean_turbulence",
];

/// State of the reported episode after one update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub update_idx: u64,
    pub env_steps: u64,
    pub episode_reward: f64,
    pub portfolio_value: f64,
    pub sharpe: f64,
    pub total_cost: f64,
    pub mean_turbulence: f64,
}

pub fn write_history_csv(path: &Path, rows: &[HistoryRow]) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(std::io::Error::other)?;
    w.write_record(HISTORY_HEADER)
        .map_err(std::io::Error::other)?;
    for r in rows {
        w.serialize(r).map_err(std::io::Error::other)?;
    }
    w.flush()
}

pub fn read_history_csv(path: &Path) -> Result<Vec<HistoryRow>, String> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = reader
        .headers()
        .map_err(|e| format!("{}: {e}", path.display()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != HISTORY_HEADER {
        return Err(format!(
            "{}: unexpected header {:?}",
            path.display(),
            headers
        ));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| format!("{}:{}: {e}", path.display(), i + 2)))
        .collect()
}
