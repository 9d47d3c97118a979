//! Market data ingestion: price and fundamentals files, financial ratios,
//! calendar alignment, train/test splitting and synthetic markets.

mod dataset;
mod ratios;
mod synthetic;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{align_and_fill, align_ratio_reports, split, MarketDataset, RatioReport};
pub use ratios::{compute_financial_ratios, ratio_index, RatioVector, N_RATIOS, RATIO_NAMES};
pub use synthetic::{
    generate_synthetic_market, generate_synthetic_market_with_drift, generate_synthetic_sources,
    generate_synthetic_sources_with_drift, Regime, SyntheticSources, DEFAULT_DRIFT, QUARTER_DAYS,
};

/// Header of the prices CSV.
pub const PRICES_HEADER: [&str; 3] = ["date", "ticker", "close"];

/// Header of the fundamentals CSV.
pub const FUNDAMENTALS_HEADER: [&str; 17] = [
    "report_date",
    "ticker",
    "current_assets",
    "cash",
    "inventory",
    "current_liabilities",
    "total_liabilities",
    "total_assets",
    "equity",
    "cogs",
    "receivables",
    "payables",
    "revenue",
    "operating_income",
    "net_income",
    "shares_outstanding",
    "dividends_paid",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {message}")]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}:{line}: non-positive price {close} for {ticker}")]
    NonPositivePrice {
        path: PathBuf,
        line: u64,
        ticker: String,
        close: f64,
    },
    #[error("missing ticker `{0}`")]
    MissingTicker(String),
    #[error("duplicate date {date} for {ticker}")]
    DuplicateDate { ticker: String, date: NaiveDate },
    #[error("duplicate report date {date} for {ticker}")]
    DuplicateReportDate { ticker: String, date: NaiveDate },
    #[error("invariant violation for {ticker} on {date}: {what}")]
    InvariantViolation {
        ticker: String,
        date: NaiveDate,
        what: String,
    },
    #[error("no fundamentals for ticker `{0}`")]
    MissingFundamentals(String),
    #[error("calendar is empty after alignment")]
    EmptyCalendar,
    #[error("split boundary {0} is not strictly inside the calendar")]
    BoundaryOutsideCalendar(NaiveDate),
    #[error("need at least {min} days, got {days}")]
    TooFewDays { days: usize, min: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Closing prices of one ticker, strictly increasing in date.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub ticker: String,
    pub dates: Vec<NaiveDate>,
    pub closes: Vec<f64>,
}

impl PriceSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// One row of the prices file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OhlcvRecord {
    pub date: NaiveDate,
    pub ticker: String,
    pub close: f64,
}

/// One quarterly (or otherwise dated) statement extract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundamentalsRecord {
    pub report_date: NaiveDate,
    pub ticker: String,
    pub current_assets: f64,
    pub cash: f64,
    pub inventory: f64,
    pub current_liabilities: f64,
    pub total_liabilities: f64,
    pub total_assets: f64,
    pub equity: f64,
    pub cogs: f64,
    pub receivables: f64,
    pub payables: f64,
    pub revenue: f64,
    pub operating_income: f64,
    pub net_income: f64,
    pub shares_outstanding: f64,
    pub dividends_paid: f64,
}

impl FundamentalsRecord {
    fn amounts(&self) -> [f64; 15] {
        [
            self.current_assets,
            self.cash,
            self.inventory,
            self.current_liabilities,
            self.total_liabilities,
            self.total_assets,
            self.equity,
            self.cogs,
            self.receivables,
            self.payables,
            self.revenue,
            self.operating_income,
            self.net_income,
            self.shares_outstanding,
            self.dividends_paid,
        ]
    }

    fn check(&self) -> Result<()> {
        let violation = |what: &str| DataError::InvariantViolation {
            ticker: self.ticker.clone(),
            date: self.report_date,
            what: what.to_string(),
        };
        if self.amounts().iter().any(|v| !v.is_finite()) {
            return Err(violation("non-finite amount"));
        }
        if self.total_assets <= 0.0 {
            return Err(violation("total_assets must be positive"));
        }
        if self.shares_outstanding <= 0.0 {
            return Err(violation("shares_outstanding must be positive"));
        }
        Ok(())
    }
}

/// Result of [`load_prices`].
#[derive(Debug, Clone)]
pub struct PriceLoad {
    pub series: BTreeMap<String, PriceSeries>,
    /// Tickers present in the file but not requested, sorted.
    pub unknown_tickers: Vec<String>,
}

fn open_csv(
    path: &Path,
    required: &[&str],
) -> Result<(csv::Reader<std::fs::File>, csv::StringRecord)> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| DataError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    for column in required {
        if !headers.iter().any(|h| h == *column) {
            return Err(DataError::MissingColumn {
                path: path.to_path_buf(),
                column: column.to_string(),
            });
        }
    }
    Ok((reader, headers))
}

fn read_rows<T: serde::de::DeserializeOwned>(
    path: &Path,
    required: &[&str],
) -> Result<Vec<(u64, T)>> {
    let (mut reader, headers) = open_csv(path, required)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let fallback_line = i as u64 + 2;
        let record = record.map_err(|e| DataError::Malformed {
            path: path.to_path_buf(),
            line: e.position().map_or(fallback_line, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(fallback_line, |p| p.line());
        let row: T = record
            .deserialize(Some(&headers))
            .map_err(|e| DataError::Malformed {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
        rows.push((line, row));
    }
    Ok(rows)
}

/// Loads closing prices for `tickers` (all tickers in the file when empty).
///
/// Extra columns such as open/high/low/volume are ignored.
pub fn load_prices(path: &Path, tickers: &[String]) -> Result<PriceLoad> {
    let rows: Vec<(u64, OhlcvRecord)> = read_rows(path, &PRICES_HEADER)?;
    let mut series: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    let mut unknown = std::collections::BTreeSet::new();
    for (line, row) in rows {
        if !row.close.is_finite() {
            return Err(DataError::Malformed {
                path: path.to_path_buf(),
                line,
                message: format!("non-finite close `{}`", row.close),
            });
        }
        if row.close <= 0.0 {
            return Err(DataError::NonPositivePrice {
                path: path.to_path_buf(),
                line,
                ticker: row.ticker,
                close: row.close,
            });
        }
        if !tickers.is_empty() && !tickers.contains(&row.ticker) {
            unknown.insert(row.ticker);
            continue;
        }
        series
            .entry(row.ticker)
            .or_default()
            .push((row.date, row.close));
    }
    for t in tickers {
        if !series.contains_key(t) {
            return Err(DataError::MissingTicker(t.clone()));
        }
    }
    let mut out = BTreeMap::new();
    for (ticker, mut points) in series {
        points.sort_by_key(|(d, _)| *d);
        if let Some(w) = points.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(DataError::DuplicateDate {
                ticker,
                date: w[0].0,
            });
        }
        let (dates, closes) = points.into_iter().unzip();
        out.insert(
            ticker.clone(),
            PriceSeries {
                ticker,
                dates,
                closes,
            },
        );
    }
    if !unknown.is_empty() {
        log::warn!(
            "{}: ignoring unrequested tickers {:?}",
            path.display(),
            unknown
        );
    }
    Ok(PriceLoad {
        series: out,
        unknown_tickers: unknown.into_iter().collect(),
    })
}

/// Loads fundamentals reports, grouped per ticker and sorted by report date.
pub fn load_fundamentals(path: &Path) -> Result<BTreeMap<String, Vec<FundamentalsRecord>>> {
    let rows: Vec<(u64, FundamentalsRecord)> = read_rows(path, &FUNDAMENTALS_HEADER)?;
    let mut out: BTreeMap<String, Vec<FundamentalsRecord>> = BTreeMap::new();
    for (_, row) in rows {
        row.check()?;
        out.entry(row.ticker.clone()).or_default().push(row);
    }
    for (ticker, reports) in out.iter_mut() {
        reports.sort_by_key(|r| r.report_date);
        if let Some(w) = reports
            .windows(2)
            .find(|w| w[0].report_date == w[1].report_date)
        {
            return Err(DataError::DuplicateReportDate {
                ticker: ticker.clone(),
                date: w[0].report_date,
            });
        }
    }
    Ok(out)
}

fn create_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_io(path: &Path, e: csv::Error) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Writes price series in the prices CSV schema, date-major then ticker order.
pub fn write_prices_csv(path: &Path, series: &BTreeMap<String, PriceSeries>) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(PRICES_HEADER).map_err(|e| csv_io(path, e))?;
    let mut rows: Vec<(NaiveDate, &str, f64)> = series
        .values()
        .flat_map(|s| {
            s.dates
                .iter()
                .zip(&s.closes)
                .map(move |(d, c)| (*d, s.ticker.as_str(), *c))
        })
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
    for (date, ticker, close) in rows {
        w.write_record([date.to_string(), ticker.to_string(), close.to_string()])
            .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes fundamentals reports in the fundamentals CSV schema.
pub fn write_fundamentals_csv(
    path: &Path,
    reports: &BTreeMap<String, Vec<FundamentalsRecord>>,
) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(FUNDAMENTALS_HEADER)
        .map_err(|e| csv_io(path, e))?;
    for rec in reports.values().flatten() {
        let mut fields = vec![rec.report_date.to_string(), rec.ticker.clone()];
        fields.extend(rec.amounts().iter().map(|v| v.to_string()));
        w.write_record(&fields).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    const FUND_HEADER: &str = "report_date,ticker,current_assets,cash,inventory,current_liabilities,total_liabilities,total_assets,equity,cogs,receivables,payables,revenue,operating_income,net_income,shares_outstanding,dividends_paid\n";

    #[test]
    fn loads_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "p.csv",
            "date,ticker,close\n2020-01-02,AAA,10\n2020-01-03,AAA,11\n2020-01-06,AAA,12\n",
        );
        let load = load_prices(&p, &["AAA".to_string()]).unwrap();
        assert_eq!(load.series["AAA"].closes, vec![10.0, 11.0, 12.0]);
        assert!(load.unknown_tickers.is_empty());
    }

    #[test]
    fn rejects_negative_price() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "p.csv", "date,ticker,close\n2020-01-02,AAA,-5\n");
        let err = load_prices(&p, &[]).unwrap_err();
        assert!(err.to_string().contains("non-positive price"), "{err}");
    }

    #[test]
    fn sorts_shuffled_dates() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "p.csv",
            "date,ticker,close\n2020-01-06,AAA,12\n2020-01-02,AAA,10\n2020-01-03,AAA,11\n",
        );
        let s = &load_prices(&p, &[]).unwrap().series["AAA"];
        assert!(s.dates.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s.closes, vec![10.0, 11.0, 12.0]);
    }

    #[test]
    fn ignores_ohlcv_columns_and_reports_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "p.csv",
            "date,ticker,open,high,low,close,volume\n2020-01-02,AAA,1,2,0.5,1.5,100\n2020-01-02,BBB,1,2,0.5,3.5,100\n",
        );
        let load = load_prices(&p, &["AAA".to_string()]).unwrap();
        assert_eq!(load.series["AAA"].closes, vec![1.5]);
        assert_eq!(load.unknown_tickers, vec!["BBB".to_string()]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "p.csv",
            "date,ticker,close\n2020-01-02,AAA,10\n2020-01-03,AAA,abc\n",
        );
        match load_prices(&p, &[]).unwrap_err() {
            DataError::Malformed { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_requested_ticker() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "p.csv", "date,ticker,close\n2020-01-02,AAA,10\n");
        assert!(matches!(
            load_prices(&p, &["ZZZ".to_string()]),
            Err(DataError::MissingTicker(t)) if t == "ZZZ"
        ));
    }

    #[test]
    fn fundamentals_sorted_and_validated() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{FUND_HEADER}2020-06-30,AAA,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1\n2020-03-31,AAA,2,1,1,1,1,1,1,1,1,1,1,1,1,1,1\n"
        );
        let p = write(&dir, "f.csv", &body);
        let f = load_fundamentals(&p).unwrap();
        assert_eq!(f["AAA"].len(), 2);
        assert!(f["AAA"][0].report_date < f["AAA"][1].report_date);
        assert_eq!(f["AAA"][0].current_assets, 2.0);
    }

    #[test]
    fn fundamentals_duplicate_report_date() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{FUND_HEADER}2020-03-31,AAA,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1\n2020-03-31,AAA,2,1,1,1,1,1,1,1,1,1,1,1,1,1,1\n"
        );
        let p = write(&dir, "f.csv", &body);
        let err = load_fundamentals(&p).unwrap_err();
        assert!(err.to_string().contains("duplicate report date"), "{err}");
    }

    #[test]
    fn fundamentals_zero_shares() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{FUND_HEADER}2020-03-31,AAA,1,1,1,1,1,1,1,1,1,1,1,1,1,0,1\n");
        let p = write(&dir, "f.csv", &body);
        let err = load_fundamentals(&p).unwrap_err();
        assert!(err.to_string().contains("invariant violation"), "{err}");
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_fundamentals(Path::new("/nonexistent/f.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/f.csv"));
    }
}
