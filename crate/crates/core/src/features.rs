//! Daily feature vectors and the sliding-window state matrix.
//!
//! A daily vector for `D` tickers is laid out as
//!
//! ```text
//! [0]                      cash balance
//! [1 .. 1+D)               closing prices
//! [1+D .. 1+2D)            shares held
//! [1+2D .. 1+2D+15D)       ratios, 15 consecutive values per ticker
//! ```
//!
//! With the thirty-company universe this is 1 + 30 + 30 + 450 = 511 values.
//! The state matrix stacks the last `window` daily vectors, oldest first.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::data::{MarketDataset, N_RATIOS};

/// Companies in the reference universe.
pub const DOW30_TICKERS: usize = 30;
/// Daily vector width for [`DOW30_TICKERS`] companies.
pub const DOW30_FEATURE_WIDTH: usize = 511;
/// Trading days stacked into one observation.
pub const DEFAULT_WINDOW: usize = 90;
/// Floor applied to per-column standard deviations during normalization.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("non-finite input at {0}")]
    NonFinite(&'static str),
    #[error("invalid portfolio: {0}")]
    Portfolio(String),
    #[error("need {needed} days from index {start}, dataset has {available}")]
    NotEnoughDays {
        start: usize,
        needed: usize,
        available: usize,
    },
    #[error("stats width {stats} does not match matrix width {matrix}")]
    StatsWidth { stats: usize, matrix: usize },
    #[error("{0}")]
    Io(String),
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

/// Index arithmetic for the daily vector of a `n_tickers` universe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub n_tickers: usize,
}

impl FeatureLayout {
    pub fn new(n_tickers: usize) -> Self {
        Self { n_tickers }
    }

    pub fn dow30() -> Self {
        Self::new(DOW30_TICKERS)
    }

    pub fn width(&self) -> usize {
        1 + 2 * self.n_tickers + N_RATIOS * self.n_tickers
    }

    pub const fn balance_index(&self) -> usize {
        0
    }

    pub fn price_index(&self, ticker: usize) -> usize {
        1 + ticker
    }

    pub fn holding_index(&self, ticker: usize) -> usize {
        1 + self.n_tickers + ticker
    }

    pub fn ratio_index(&self, ticker: usize, ratio: usize) -> usize {
        1 + 2 * self.n_tickers + N_RATIOS * ticker + ratio
    }
}

/// One day's observation row.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyFeatureVector(Vec<f64>);

impl DailyFeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Assembles a daily vector. `ratios` is ticker-major, 15 per ticker.
pub fn build_daily_vector(
    balance: f64,
    prices: &[f64],
    holdings: &[i64],
    ratios: &[f64],
) -> Result<DailyFeatureVector> {
    let d = prices.len();
    if d == 0 {
        return Err(FeatureError::Layout("no tickers".into()));
    }
    if holdings.len() != d || ratios.len() != N_RATIOS * d {
        return Err(FeatureError::Layout(format!(
            "{d} prices, {} holdings, {} ratios",
            holdings.len(),
            ratios.len()
        )));
    }
    if !balance.is_finite() {
        return Err(FeatureError::NonFinite("balance"));
    }
    if prices.iter().any(|p| !p.is_finite()) {
        return Err(FeatureError::NonFinite("prices"));
    }
    if ratios.iter().any(|r| !r.is_finite()) {
        return Err(FeatureError::NonFinite("ratios"));
    }
    if balance < 0.0 {
        return Err(FeatureError::Portfolio(format!(
            "negative balance {balance}"
        )));
    }
    if holdings.iter().any(|h| *h < 0) {
        return Err(FeatureError::Portfolio("negative holdings".into()));
    }
    let mut v = Vec::with_capacity(FeatureLayout::new(d).width());
    v.push(balance);
    v.extend_from_slice(prices);
    v.extend(holdings.iter().map(|h| *h as f64));
    v.extend_from_slice(ratios);
    Ok(DailyFeatureVector(v))
}

/// Builds the daily vector of day `t` of a dataset.
pub fn daily_vector_for_day(
    ds: &MarketDataset,
    t: usize,
    balance: f64,
    holdings: &[i64],
) -> Result<DailyFeatureVector> {
    build_daily_vector(balance, ds.prices_on(t), holdings, ds.ratios_on(t))
}

/// `rows × cols` observation, row 0 oldest.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl StateMatrix {
    pub fn from_rows(rows: &[DailyFeatureVector]) -> Result<Self> {
        let cols = rows
            .first()
            .map(|r| r.len())
            .ok_or_else(|| FeatureError::Layout("no rows".into()))?;
        if rows.iter().any(|r| r.len() != cols) {
            return Err(FeatureError::Layout("ragged rows".into()));
        }
        let data = rows
            .iter()
            .flat_map(|r| r.as_slice().iter().copied())
            .collect();
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Newest row.
    pub fn last_row(&self) -> &[f64] {
        self.row(self.rows - 1)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Drops the oldest row and appends `v` as the newest, in place.
    pub fn push_row(&mut self, v: &DailyFeatureVector) -> Result<()> {
        if v.len() != self.cols {
            return Err(FeatureError::Layout(format!(
                "vector of width {} for matrix of width {}",
                v.len(),
                self.cols
            )));
        }
        self.data.copy_within(self.cols.., 0);
        let start = (self.rows - 1) * self.cols;
        self.data[start..].copy_from_slice(v.as_slice());
        Ok(())
    }

    /// Headerless CSV dump, one line per row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| FeatureError::Io(format!("{}: {e}", path.display()));
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(f, "{}", line.join(",")).map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

/// Seeds a window from days `start .. start + window` with a constant
/// portfolio (no trading is simulated before the episode starts).
pub fn init_window(
    ds: &MarketDataset,
    start: usize,
    window: usize,
    balance: f64,
    holdings: &[i64],
) -> Result<StateMatrix> {
    if window == 0 || start + window > ds.n_days() {
        return Err(FeatureError::NotEnoughDays {
            start,
            needed: window,
            available: ds.n_days(),
        });
    }
    let rows = (start..start + window)
        .map(|t| daily_vector_for_day(ds, t, balance, holdings))
        .collect::<Result<Vec<_>>>()?;
    StateMatrix::from_rows(&rows)
}

/// Returns a copy of `m` shifted by one day with `v` as the newest row.
pub fn shift_window(m: &StateMatrix, v: &DailyFeatureVector) -> Result<StateMatrix> {
    let mut out = m.clone();
    out.push_row(v)?;
    Ok(out)
}

/// Per-column affine scaling for network input.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Column statistics for a training split.
    ///
    /// Market columns (prices, ratios) use the population mean and standard
    /// deviation over the split's days. Portfolio columns cannot be observed
    /// before training, so the balance is centred on and scaled by the
    /// initial balance and holdings are scaled by the per-trade share limit.
    /// Values are rounded to `f32` so they survive a checkpoint unchanged.
    pub fn from_dataset(ds: &MarketDataset, initial_balance: f64, hmax: i64) -> Self {
        let layout = FeatureLayout::new(ds.n_tickers());
        let width = layout.width();
        let mut mean = vec![0.0; width];
        let mut std = vec![1.0; width];
        mean[0] = initial_balance;
        std[0] = initial_balance.max(1.0);
        let n = ds.n_days() as f64;
        let column_stats = |get: &dyn Fn(usize) -> f64| {
            let m = (0..ds.n_days()).map(get).sum::<f64>() / n;
            let v = (0..ds.n_days()).map(|t| (get(t) - m).powi(2)).sum::<f64>() / n;
            (m, v.sqrt())
        };
        for k in 0..ds.n_tickers() {
            let (m, s) = column_stats(&|t| ds.price(t, k));
            mean[layout.price_index(k)] = m;
            std[layout.price_index(k)] = s;
            mean[layout.holding_index(k)] = 0.0;
            std[layout.holding_index(k)] = hmax.max(1) as f64;
            for j in 0..N_RATIOS {
                let (m, s) = column_stats(&|t| ds.ratio(t, k, j));
                mean[layout.ratio_index(k, j)] = m;
                std[layout.ratio_index(k, j)] = s;
            }
        }
        let round = |v: Vec<f64>| v.into_iter().map(|x| x as f32 as f64).collect();
        Self {
            mean: round(mean),
            std: round(std),
        }
    }

    fn check(&self, width: usize) -> Result<()> {
        if self.mean.len() != width || self.std.len() != width {
            return Err(FeatureError::StatsWidth {
                stats: self.mean.len(),
                matrix: width,
            });
        }
        Ok(())
    }

    /// Writes the normalized `row` into `out` as `f32`.
    pub fn normalize_row_into(&self, row: &[f64], out: &mut [f32]) {
        for (j, (x, o)) in row.iter().zip(out.iter_mut()).enumerate() {
            *o = ((x - self.mean[j]) / self.std[j].max(NORM_EPS)) as f32;
        }
    }
}

/// `(m − mean) / max(std, ε)` column-wise.
pub fn normalize_window(m: &StateMatrix, stats: &NormStats) -> Result<StateMatrix> {
    stats.check(m.cols)?;
    let mut out = m.clone();
    for row in out.data.chunks_mut(m.cols) {
        for (j, x) in row.iter_mut().enumerate() {
            *x = (*x - stats.mean[j]) / stats.std[j].max(NORM_EPS);
        }
    }
    Ok(out)
}

/// Inverse of [`normalize_window`] on columns with `std ≥ ε`.
pub fn denormalize_window(m: &StateMatrix, stats: &NormStats) -> Result<StateMatrix> {
    stats.check(m.cols)?;
    let mut out = m.clone();
    for row in out.data.chunks_mut(m.cols) {
        for (j, x) in row.iter_mut().enumerate() {
            *x = *x * stats.std[j].max(NORM_EPS) + stats.mean[j];
        }
    }
    Ok(out)
}
