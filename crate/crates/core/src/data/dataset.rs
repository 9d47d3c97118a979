use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{
    compute_financial_ratios, create_writer, csv_io, read_rows, DataError, FundamentalsRecord,
    PriceSeries, RatioVector, Result, N_RATIOS, RATIO_NAMES,
};

/// A dated ratio vector, i.e. the ratios implied by one fundamentals report.
pub type RatioReport = (NaiveDate, RatioVector);

/// Aligned daily panel of closing prices and forward-filled ratios.
///
/// Tickers are in lexicographic order. Prices are stored day-major
/// (`T × D`), ratios as `T × D × 15`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketDataset {
    tickers: Vec<String>,
    calendar: Vec<NaiveDate>,
    prices: Vec<f64>,
    ratios: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    tickers: Vec<String>,
    calendar: Vec<NaiveDate>,
    ticker_order: String,
    ratio_names: Vec<String>,
}

const TICKER_ORDER: &str = "lexicographic";

impl MarketDataset {
    pub fn new(
        tickers: Vec<String>,
        calendar: Vec<NaiveDate>,
        prices: Vec<f64>,
        ratios: Vec<f64>,
    ) -> Result<Self> {
        let (t, d) = (calendar.len(), tickers.len());
        if d == 0 {
            return Err(DataError::Invalid("no tickers".into()));
        }
        if t == 0 {
            return Err(DataError::EmptyCalendar);
        }
        if !tickers.windows(2).all(|w| w[0] < w[1]) {
            return Err(DataError::Invalid(
                "tickers must be unique and in lexicographic order".into(),
            ));
        }
        if !calendar.windows(2).all(|w| w[0] < w[1]) {
            return Err(DataError::Invalid(
                "calendar must be strictly increasing".into(),
            ));
        }
        if prices.len() != t * d || ratios.len() != t * d * N_RATIOS {
            return Err(DataError::Invalid(format!(
                "shape mismatch: {} prices and {} ratios for {t} days x {d} tickers",
                prices.len(),
                ratios.len()
            )));
        }
        if prices.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(DataError::Invalid(
                "prices must be positive and finite".into(),
            ));
        }
        if ratios.iter().any(|r| !r.is_finite()) {
            return Err(DataError::Invalid("ratios must be finite".into()));
        }
        Ok(Self {
            tickers,
            calendar,
            prices,
            ratios,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    /// Closing prices of every ticker on day `t`.
    pub fn prices_on(&self, t: usize) -> &[f64] {
        let d = self.n_tickers();
        &self.prices[t * d..(t + 1) * d]
    }

    /// Ratios of every ticker on day `t`, ticker-major (`D × 15`).
    pub fn ratios_on(&self, t: usize) -> &[f64] {
        let w = self.n_tickers() * N_RATIOS;
        &self.ratios[t * w..(t + 1) * w]
    }

    pub fn price(&self, t: usize, ticker: usize) -> f64 {
        self.prices[t * self.n_tickers() + ticker]
    }

    pub fn ratio(&self, t: usize, ticker: usize, ratio: usize) -> f64 {
        self.ratios[(t * self.n_tickers() + ticker) * N_RATIOS + ratio]
    }

    /// Copy of the days in `range`.
    pub fn slice_days(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_days() {
            return Err(DataError::Invalid(format!(
                "day range {range:?} outside 0..{}",
                self.n_days()
            )));
        }
        let d = self.n_tickers();
        Self::new(
            self.tickers.clone(),
            self.calendar[range.clone()].to_vec(),
            self.prices[range.start * d..range.end * d].to_vec(),
            self.ratios[range.start * d * N_RATIOS..range.end * d * N_RATIOS].to_vec(),
        )
    }

    /// Per-ticker price series covering the calendar.
    pub fn price_series(&self) -> BTreeMap<String, PriceSeries> {
        self.tickers
            .iter()
            .enumerate()
            .map(|(k, ticker)| {
                let closes = (0..self.n_days()).map(|t| self.price(t, k)).collect();
                (
                    ticker.clone(),
                    PriceSeries {
                        ticker: ticker.clone(),
                        dates: self.calendar.clone(),
                        closes,
                    },
                )
            })
            .collect()
    }

    /// Per-ticker ratio reports, one per calendar day.
    pub fn ratio_reports(&self) -> BTreeMap<String, Vec<RatioReport>> {
        self.tickers
            .iter()
            .enumerate()
            .map(|(k, ticker)| {
                let reports = (0..self.n_days())
                    .map(|t| {
                        let mut v = [0.0; N_RATIOS];
                        for (j, slot) in v.iter_mut().enumerate() {
                            *slot = self.ratio(t, k, j);
                        }
                        (self.calendar[t], RatioVector(v))
                    })
                    .collect();
                (ticker.clone(), reports)
            })
            .collect()
    }

    /// Persists the dataset as `meta.json`, `prices.csv` and `ratios.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let meta = Meta {
            tickers: self.tickers.clone(),
            calendar: self.calendar.clone(),
            ticker_order: TICKER_ORDER.into(),
            ratio_names: RATIO_NAMES.iter().map(|s| s.to_string()).collect(),
        };
        let meta_path = dir.join("meta.json");
        let body = serde_json::to_string_pretty(&meta).map_err(|source| DataError::Json {
            path: meta_path.clone(),
            source,
        })?;
        std::fs::write(&meta_path, body + "\n").map_err(|source| DataError::Io {
            path: meta_path,
            source,
        })?;

        let prices_path = dir.join("prices.csv");
        let mut w = create_writer(&prices_path)?;
        w.write_record(super::PRICES_HEADER)
            .map_err(|e| csv_io(&prices_path, e))?;
        for (t, date) in self.calendar.iter().enumerate() {
            for (k, ticker) in self.tickers.iter().enumerate() {
                w.write_record([
                    date.to_string(),
                    ticker.clone(),
                    self.price(t, k).to_string(),
                ])
                .map_err(|e| csv_io(&prices_path, e))?;
            }
        }
        w.flush().map_err(|source| DataError::Io {
            path: prices_path.clone(),
            source,
        })?;

        let ratios_path = dir.join("ratios.csv");
        let mut w = create_writer(&ratios_path)?;
        w.write_record(["date", "ticker", "ratio_name", "value"])
            .map_err(|e| csv_io(&ratios_path, e))?;
        for (t, date) in self.calendar.iter().enumerate() {
            for (k, ticker) in self.tickers.iter().enumerate() {
                for (j, name) in RATIO_NAMES.iter().enumerate() {
                    w.write_record([
                        date.to_string(),
                        ticker.clone(),
                        name.to_string(),
                        self.ratio(t, k, j).to_string(),
                    ])
                    .map_err(|e| csv_io(&ratios_path, e))?;
                }
            }
        }
        w.flush().map_err(|source| DataError::Io {
            path: ratios_path,
            source,
        })
    }

    /// Loads a dataset directory written by [`MarketDataset::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let body = std::fs::read_to_string(&meta_path).map_err(|source| DataError::Io {
            path: meta_path.clone(),
            source,
        })?;
        let meta: Meta = serde_json::from_str(&body).map_err(|source| DataError::Json {
            path: meta_path,
            source,
        })?;
        let (t, d) = (meta.calendar.len(), meta.tickers.len());
        let day_of: HashMap<NaiveDate, usize> = meta
            .calendar
            .iter()
            .enumerate()
            .map(|(i, d)| (*d, i))
            .collect();
        let ticker_of: HashMap<&str, usize> = meta
            .tickers
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();

        let prices_path = dir.join("prices.csv");
        let mut prices = vec![f64::NAN; t * d];
        let rows: Vec<(u64, super::OhlcvRecord)> = read_rows(&prices_path, &super::PRICES_HEADER)?;
        for (line, row) in rows {
            let cell = locate(&day_of, &ticker_of, row.date, &row.ticker)
                .ok_or_else(|| malformed(&prices_path, line, "date/ticker not in meta.json"))?;
            prices[cell.0 * d + cell.1] = row.close;
        }

        #[derive(Deserialize)]
        struct RatioRow {
            date: NaiveDate,
            ticker: String,
            ratio_name: String,
            value: f64,
        }
        let ratios_path = dir.join("ratios.csv");
        let mut ratios = vec![f64::NAN; t * d * N_RATIOS];
        let rows: Vec<(u64, RatioRow)> =
            read_rows(&ratios_path, &["date", "ticker", "ratio_name", "value"])?;
        for (line, row) in rows {
            let cell = locate(&day_of, &ticker_of, row.date, &row.ticker)
                .ok_or_else(|| malformed(&ratios_path, line, "date/ticker not in meta.json"))?;
            let j = super::ratio_index(&row.ratio_name)
                .ok_or_else(|| malformed(&ratios_path, line, "unknown ratio name"))?;
            ratios[(cell.0 * d + cell.1) * N_RATIOS + j] = row.value;
        }
        if prices.iter().chain(&ratios).any(|v| v.is_nan()) {
            return Err(DataError::Invalid(format!(
                "{}: missing cells",
                dir.display()
            )));
        }
        Self::new(meta.tickers, meta.calendar, prices, ratios)
    }
}

fn locate(
    day_of: &HashMap<NaiveDate, usize>,
    ticker_of: &HashMap<&str, usize>,
    date: NaiveDate,
    ticker: &str,
) -> Option<(usize, usize)> {
    Some((*day_of.get(&date)?, *ticker_of.get(ticker)?))
}

fn malformed(path: &Path, line: u64, message: &str) -> DataError {
    DataError::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Aligns prices and fundamentals into a [`MarketDataset`].
///
/// The calendar is the intersection of every ticker's trading days, trimmed
/// so that each ticker has at least one report on or before the first day.
/// Ratios are forward-filled from the latest report on or before each day.
pub fn align_and_fill(
    prices: &BTreeMap<String, PriceSeries>,
    fundamentals: &BTreeMap<String, Vec<FundamentalsRecord>>,
) -> Result<MarketDataset> {
    let mut reports = BTreeMap::new();
    for ticker in prices.keys() {
        let recs = fundamentals
            .get(ticker)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| DataError::MissingFundamentals(ticker.clone()))?;
        let mut r: Vec<RatioReport> = recs
            .iter()
            .map(|rec| (rec.report_date, compute_financial_ratios(rec)))
            .collect();
        r.sort_by_key(|(d, _)| *d);
        reports.insert(ticker.clone(), r);
    }
    align_ratio_reports(prices, &reports)
}

/// Alignment core shared by [`align_and_fill`] and re-alignment of an
/// existing dataset: works on already-computed ratio vectors.
pub fn align_ratio_reports(
    prices: &BTreeMap<String, PriceSeries>,
    reports: &BTreeMap<String, Vec<RatioReport>>,
) -> Result<MarketDataset> {
    if prices.is_empty() {
        return Err(DataError::Invalid("no price series".into()));
    }
    let mut calendar: Option<BTreeSet<NaiveDate>> = None;
    let mut first_report = NaiveDate::MIN;
    for (ticker, series) in prices {
        let days: BTreeSet<NaiveDate> = series.dates.iter().copied().collect();
        calendar = Some(match calendar {
            None => days,
            Some(c) => c.intersection(&days).copied().collect(),
        });
        let r = reports
            .get(ticker)
            .and_then(|r| r.first())
            .ok_or_else(|| DataError::MissingFundamentals(ticker.clone()))?;
        first_report = first_report.max(r.0);
    }
    let calendar: Vec<NaiveDate> = calendar
        .unwrap_or_default()
        .into_iter()
        .filter(|d| *d >= first_report)
        .collect();
    if calendar.is_empty() {
        return Err(DataError::EmptyCalendar);
    }

    let tickers: Vec<String> = prices.keys().cloned().collect();
    let (t_len, d_len) = (calendar.len(), tickers.len());
    let mut price_panel = vec![0.0; t_len * d_len];
    let mut ratio_panel = vec![0.0; t_len * d_len * N_RATIOS];
    for (k, ticker) in tickers.iter().enumerate() {
        let series = &prices[ticker];
        let by_date: HashMap<NaiveDate, f64> = series
            .dates
            .iter()
            .copied()
            .zip(series.closes.iter().copied())
            .collect();
        let rep = &reports[ticker];
        let mut next = 0;
        for (t, day) in calendar.iter().enumerate() {
            price_panel[t * d_len + k] = by_date[day];
            while next < rep.len() && rep[next].0 <= *day {
                next += 1;
            }
            // `next >= 1` because the calendar starts on/after every first report.
            let current = &rep[next - 1].1;
            let base = (t * d_len + k) * N_RATIOS;
            ratio_panel[base..base + N_RATIOS].copy_from_slice(current.as_slice());
        }
    }
    MarketDataset::new(tickers, calendar, price_panel, ratio_panel)
}

/// Splits at `boundary`: train holds days before it, test the rest.
pub fn split(ds: &MarketDataset, boundary: NaiveDate) -> Result<(MarketDataset, MarketDataset)> {
    let cal = ds.calendar();
    if boundary <= cal[0] || boundary > cal[cal.len() - 1] {
        return Err(DataError::BoundaryOutsideCalendar(boundary));
    }
    let cut = cal.partition_point(|d| *d < boundary);
    Ok((ds.slice_days(0..cut)?, ds.slice_days(cut..cal.len())?))
}
