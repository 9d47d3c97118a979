//! Seeded synthetic markets standing in for licensed price and statement data.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{align_and_fill, DataError, FundamentalsRecord, MarketDataset, PriceSeries, Result};

/// Trading days per synthetic fundamentals quarter.
pub const QUARTER_DAYS: usize = 63;

/// Minimum length: one 90-day window plus a single step.
pub const MIN_SYNTHETIC_DAYS: usize = 91;

/// Daily log-drift magnitude of the trending regimes unless overridden.
pub const DEFAULT_DRIFT: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Uptrend,
    Downtrend,
    /// Even-indexed tickers trend up, odd-indexed down.
    Mixed,
    RandomWalk,
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "uptrend" => Ok(Self::Uptrend),
            "downtrend" => Ok(Self::Downtrend),
            "mixed" => Ok(Self::Mixed),
            "random-walk" => Ok(Self::RandomWalk),
            other => Err(format!(
                "unknown regime `{other}` (expected uptrend, downtrend, mixed, random-walk)"
            )),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uptrend => "uptrend",
            Self::Downtrend => "downtrend",
            Self::Mixed => "mixed",
            Self::RandomWalk => "random-walk",
        })
    }
}

impl Regime {
    fn drift(self, ticker: usize, magnitude: f64) -> f64 {
        match self {
            Self::Uptrend => magnitude,
            Self::Downtrend => -magnitude,
            Self::Mixed if ticker.is_multiple_of(2) => magnitude,
            Self::Mixed => -magnitude,
            Self::RandomWalk => 0.0,
        }
    }
}

/// Raw inputs of a synthetic market, in the same shape as loaded files.
#[derive(Debug, Clone)]
pub struct SyntheticSources {
    pub prices: BTreeMap<String, PriceSeries>,
    pub fundamentals: BTreeMap<String, Vec<FundamentalsRecord>>,
}

fn business_days(n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = NaiveDate::from_ymd_opt(2015, 1, 2).expect("valid date");
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

fn draw_report(
    rng: &mut ChaCha8Rng,
    ticker: &str,
    date: NaiveDate,
    scale: f64,
) -> FundamentalsRecord {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let total_assets = scale * u(0.8, 1.2);
    let current_assets = total_assets * u(0.2, 0.5);
    let total_liabilities = total_assets * u(0.3, 0.8);
    let revenue = total_assets * u(0.3, 1.2);
    let cogs = revenue * u(0.4, 0.8);
    let operating_income = revenue * u(-0.05, 0.3);
    let net_income = operating_income * u(0.5, 0.9);
    FundamentalsRecord {
        report_date: date,
        ticker: ticker.to_string(),
        current_assets,
        cash: current_assets * u(0.1, 0.5),
        inventory: current_assets * u(0.0, 0.4),
        current_liabilities: total_assets * u(0.1, 0.4),
        total_liabilities,
        total_assets,
        equity: total_assets - total_liabilities,
        cogs,
        receivables: revenue * u(0.05, 0.2),
        payables: cogs * u(0.05, 0.2),
        revenue,
        operating_income,
        net_income,
        shares_outstanding: scale / u(20.0, 200.0),
        dividends_paid: net_income.max(0.0) * u(0.0, 0.5),
    }
}

/// Generates price series and quarterly reports for a synthetic market.
///
/// Prices follow geometric paths with per-ticker daily volatility in
/// [1%, 2%]. For trending regimes the noise is pinned to zero at both ends,
/// so the last close equals `first · exp(drift · (days − 1))` and its sign
/// relative to the first close is fixed by the regime.
pub fn generate_synthetic_sources(
    seed: u64,
    days: usize,
    tickers: usize,
    regime: Regime,
) -> Result<SyntheticSources> {
    generate_synthetic_sources_with_drift(seed, days, tickers, regime, DEFAULT_DRIFT)
}

/// [`generate_synthetic_sources`] with an explicit daily log-drift magnitude
/// for the trending regimes (must be finite and positive).
pub fn generate_synthetic_sources_with_drift(
    seed: u64,
    days: usize,
    tickers: usize,
    regime: Regime,
    drift: f64,
) -> Result<SyntheticSources> {
    if !(drift.is_finite() && drift > 0.0) {
        return Err(DataError::Invalid(format!(
            "drift must be finite and positive, got {drift}"
        )));
    }
    if days < MIN_SYNTHETIC_DAYS {
        return Err(DataError::TooFewDays {
            days,
            min: MIN_SYNTHETIC_DAYS,
        });
    }
    if tickers == 0 {
        return Err(DataError::Invalid("need at least one ticker".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let calendar = business_days(days);
    let mut prices = BTreeMap::new();
    let mut fundamentals = BTreeMap::new();
    for k in 0..tickers {
        let ticker = format!("SYN{k:03}");
        let p0: f64 = rng.random_range(20.0..200.0);
        let sigma: f64 = rng.random_range(0.01..0.02);
        let noise = Normal::new(0.0, sigma).expect("valid sigma");
        let mut walk = Vec::with_capacity(days);
        let mut w = 0.0;
        walk.push(0.0);
        for _ in 1..days {
            w += noise.sample(&mut rng);
            walk.push(w);
        }
        let drift = regime.drift(k, drift);
        let pinned = regime != Regime::RandomWalk;
        let last = walk[days - 1];
        let closes = walk
            .iter()
            .enumerate()
            .map(|(t, w)| {
                let bridge = if pinned {
                    w - last * t as f64 / (days - 1) as f64
                } else {
                    *w
                };
                p0 * (drift * t as f64 + bridge).exp()
            })
            .collect();
        prices.insert(
            ticker.clone(),
            PriceSeries {
                ticker: ticker.clone(),
                dates: calendar.clone(),
                closes,
            },
        );

        let scale = 10f64.powf(rng.random_range(9.0..11.0));
        let reports = (0..days)
            .step_by(QUARTER_DAYS)
            .map(|t| draw_report(&mut rng, &ticker, calendar[t], scale))
            .collect();
        fundamentals.insert(ticker, reports);
    }
    Ok(SyntheticSources {
        prices,
        fundamentals,
    })
}

/// Deterministic synthetic [`MarketDataset`] for a seed.
pub fn generate_synthetic_market(
    seed: u64,
    days: usize,
    tickers: usize,
    regime: Regime,
) -> Result<MarketDataset> {
    let src = generate_synthetic_sources(seed, days, tickers, regime)?;
    align_and_fill(&src.prices, &src.fundamentals)
}

/// [`generate_synthetic_market`] with an explicit trend drift magnitude.
pub fn generate_synthetic_market_with_drift(
    seed: u64,
    days: usize,
    tickers: usize,
    regime: Regime,
    drift: f64,
) -> Result<MarketDataset> {
    let src = generate_synthetic_sources_with_drift(seed, days, tickers, regime, drift)?;
    align_and_fill(&src.prices, &src.fundamentals)
}
