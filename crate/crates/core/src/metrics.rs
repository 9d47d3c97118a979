//! Performance statistics over equity curves and trade logs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::TradeLogRow;

/// Trading days per year used for annualization.
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// Return standard deviations at or below this are treated as zero.
pub const ZERO_VARIANCE_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least {needed} points, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("undefined Sharpe: zero return variance")]
    UndefinedSharpe,
    #[error("equity curve values must be positive and finite")]
    NonPositive,
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

fn check_curve(curve: &[f64], needed: usize) -> Result<()> {
    if curve.len() < needed {
        return Err(MetricsError::TooShort {
            needed,
            got: curve.len(),
        });
    }
    if curve.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(MetricsError::NonPositive);
    }
    Ok(())
}

/// `v[t+1] / v[t] − 1`.
pub fn daily_returns(curve: &[f64]) -> Result<Vec<f64>> {
    check_curve(curve, 2)?;
    Ok(curve.windows(2).map(|w| w[1] / w[0] - 1.0).collect())
}

/// Mean excess daily return over its sample standard deviation, optionally
/// multiplied by √252.
pub fn sharpe(curve: &[f64], risk_free_daily: f64, annualize: bool) -> Result<f64> {
    check_curve(curve, 3)?;
    let r = daily_returns(curve)?;
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    // Rounding in v[t+1]/v[t] leaves ~1e-16 of spread on a constant series.
    if sd <= ZERO_VARIANCE_TOL {
        return Err(MetricsError::UndefinedSharpe);
    }
    let s = (mean - risk_free_daily) / sd;
    Ok(if annualize {
        s * TRADING_DAYS_PER_YEAR.sqrt()
    } else {
        s
    })
}

/// Largest peak-to-trough loss as a fraction of the peak.
pub fn max_drawdown(curve: &[f64]) -> Result<f64> {
    check_curve(curve, 1)?;
    let mut peak = curve[0];
    let mut worst = 0.0f64;
    for &v in curve {
        peak = peak.max(v);
        worst = worst.max(1.0 - v / peak);
    }
    Ok(worst)
}

/// Totals over a trade log.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostSummary {
    pub total_cost: f64,
    pub n_trades: usize,
    pub traded_notional: f64,
}

pub fn cumulative_cost(log: &[TradeLogRow]) -> CostSummary {
    log.iter()
        .fold(CostSummary::default(), |acc, row| CostSummary {
            total_cost: acc.total_cost + row.cost,
            n_trades: acc.n_trades + 1,
            traded_notional: acc.traded_notional
                + row.delta_shares.unsigned_abs() as f64 * row.price,
        })
}

/// Summary of a greedy evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub final_value: f64,
    pub total_reward: f64,
    /// `None` when the Sharpe ratio is undefined (e.g. a flat curve).
    pub sharpe_daily: Option<f64>,
    pub sharpe_annual: Option<f64>,
    pub total_cost: f64,
    pub n_trades: usize,
    pub max_drawdown: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn simple_return() {
        let r = daily_returns(&[100.0, 110.0]).unwrap();
        assert!((r[0] - 0.10).abs() < 1e-15);
        assert_eq!(daily_returns(&[5.0; 4]).unwrap(), vec![0.0; 3]);
        assert!(daily_returns(&[5.0]).is_err());
    }

    #[test]
    fn returns_match_elementwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..50).map(|_| rng.random_range(1.0..100.0)).collect();
        let r = daily_returns(&v).unwrap();
        for t in 0..49 {
            assert_eq!(r[t], v[t + 1] / v[t] - 1.0);
        }
    }

    #[test]
    fn symmetric_returns_have_zero_sharpe() {
        // +1% then -1% relative to the previous value
        let curve = [100.0, 101.0, 101.0 * 0.99];
        let s = sharpe(&curve, 0.0, false).unwrap();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn constant_growth_is_undefined() {
        let curve: Vec<f64> = (0..10).map(|i| 100.0 * 1.01f64.powi(i)).collect();
        assert_eq!(
            sharpe(&curve, 0.0, false),
            Err(MetricsError::UndefinedSharpe)
        );
        assert_eq!(
            sharpe(&[7.0; 10], 0.0, true),
            Err(MetricsError::UndefinedSharpe)
        );
    }

    #[test]
    fn annualized_is_root_252_times_daily() {
        let curve = [100.0, 103.0, 101.0, 104.0, 104.5];
        let d = sharpe(&curve, 0.0, false).unwrap();
        let a = sharpe(&curve, 0.0, true).unwrap();
        assert_eq!(a, d * 252f64.sqrt());
    }

    #[test]
    fn drawdown_examples() {
        assert_eq!(max_drawdown(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(max_drawdown(&[100.0, 50.0, 75.0]).unwrap(), 0.5);
    }

    #[test]
    fn drawdown_matches_quadratic_definition() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let v: Vec<f64> = (0..80).map(|_| rng.random_range(1.0..10.0)).collect();
            let mut brute = 0.0f64;
            for t in 0..v.len() {
                for u in 0..=t {
                    brute = brute.max(1.0 - v[t] / v[u]);
                }
            }
            assert_eq!(max_drawdown(&v).unwrap(), brute);
        }
    }

    fn row(cost: f64) -> TradeLogRow {
        TradeLogRow {
            step: 1,
            date: chrono::NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
            ticker: "AAA".into(),
            delta_shares: -3,
            price: 10.0,
            cost,
            balance_after: 0.0,
            value_after: 0.0,
        }
    }

    #[test]
    fn cost_sums() {
        assert_eq!(cumulative_cost(&[]).total_cost, 0.0);
        let s = cumulative_cost(&[row(1.0), row(2.5)]);
        assert_eq!(s.total_cost, 3.5);
        assert_eq!(s.n_trades, 2);
        assert_eq!(s.traded_notional, 60.0);
    }

    proptest! {
        #[test]
        fn sharpe_is_scale_invariant(v in proptest::collection::vec(1.0f64..100.0, 3..60), k in 0.01f64..100.0) {
            if let Ok(a) = sharpe(&v, 0.0, false) {
                let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
                let b = sharpe(&scaled, 0.0, false).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn drawdown_in_unit_interval(v in proptest::collection::vec(1e-3f64..1e6, 1..100)) {
            let dd = max_drawdown(&v).unwrap();
            prop_assert!((0.0..1.0).contains(&dd));
        }
    }
}
