//! The fifteen financial-statement ratios carried per ticker per day.

use serde::{Deserialize, Serialize};

use super::FundamentalsRecord;

/// Number of ratios per ticker.
pub const N_RATIOS: usize = 15;

/// Ratio names in feature-vector order (liquidity, leverage, efficiency,
/// profitability, market value).
pub const RATIO_NAMES: [&str; N_RATIOS] = [
    "current_ratio",
    "cash_ratio",
    "quick_ratio",
    "debt_ratio",
    "debt_to_equity",
    "inventory_turnover",
    "receivables_turnover",
    "payables_turnover",
    "operating_margin",
    "net_profit_margin",
    "return_on_assets",
    "return_on_equity",
    "eps",
    "book_per_share",
    "dividend_per_share",
];

/// Index of a ratio by name.
pub fn ratio_index(name: &str) -> Option<usize> {
    RATIO_NAMES.iter().position(|n| *n == name)
}

/// Fifteen ratios in [`RATIO_NAMES`] order. Always finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioVector(pub [f64; N_RATIOS]);

impl RatioVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        ratio_index(name).map(|i| self.0[i])
    }
}

/// `num / den`, or 0.0 when the denominator is not strictly positive or the
/// quotient is not finite.
fn safe_div(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        let q = num / den;
        if q.is_finite() {
            q
        } else {
            0.0
        }
    } else {
        0.0
    }
}

/// Computes the ratio vector of one fundamentals report.
///
/// Any ratio whose denominator is zero or negative is reported as 0.0 so the
/// downstream feature matrix stays finite.
pub fn compute_financial_ratios(rec: &FundamentalsRecord) -> RatioVector {
    RatioVector([
        safe_div(rec.current_assets, rec.current_liabilities),
        safe_div(rec.cash, rec.current_liabilities),
        safe_div(rec.current_assets - rec.inventory, rec.current_liabilities),
        safe_div(rec.total_liabilities, rec.total_assets),
        safe_div(rec.total_liabilities, rec.equity),
        safe_div(rec.cogs, rec.inventory),
        safe_div(rec.revenue, rec.receivables),
        safe_div(rec.cogs, rec.payables),
        safe_div(rec.operating_income, rec.revenue),
        safe_div(rec.net_income, rec.revenue),
        safe_div(rec.net_income, rec.total_assets),
        safe_div(rec.net_income, rec.equity),
        safe_div(rec.net_income, rec.shares_outstanding),
        safe_div(rec.equity, rec.shares_outstanding),
        safe_div(rec.dividends_paid, rec.shares_outstanding),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn record() -> FundamentalsRecord {
        FundamentalsRecord {
            ticker: "AAA".into(),
            report_date: NaiveDate::from_ymd_opt(2020, 3, 31).unwrap(),
            current_assets: 200.0,
            cash: 50.0,
            inventory: 40.0,
            current_liabilities: 100.0,
            total_liabilities: 300.0,
            total_assets: 1000.0,
            equity: 700.0,
            cogs: 400.0,
            receivables: 80.0,
            payables: 160.0,
            revenue: 800.0,
            operating_income: 120.0,
            net_income: 70.0,
            shares_outstanding: 10.0,
            dividends_paid: 20.0,
        }
    }

    #[test]
    fn current_ratio_is_assets_over_liabilities() {
        let r = compute_financial_ratios(&record());
        assert_eq!(r.get("current_ratio"), Some(2.0));
    }

    #[test]
    fn zero_inventory_sanitizes_turnover() {
        let mut rec = record();
        rec.inventory = 0.0;
        let r = compute_financial_ratios(&rec);
        assert_eq!(r.get("inventory_turnover"), Some(0.0));
        assert!(r.0.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn negative_equity_sanitizes_equity_ratios() {
        let mut rec = record();
        rec.equity = -5.0;
        let r = compute_financial_ratios(&rec);
        assert_eq!(r.get("debt_to_equity"), Some(0.0));
        assert_eq!(r.get("return_on_equity"), Some(0.0));
        // numerator-only use of equity is untouched
        assert_eq!(r.get("book_per_share"), Some(-0.5));
    }

    #[test]
    fn full_record_matches_spreadsheet_evaluation() {
        // Each cell evaluated by hand from the record above.
        let expected = [
            ("current_ratio", 200.0 / 100.0),
            ("cash_ratio", 50.0 / 100.0),
            ("quick_ratio", (200.0 - 40.0) / 100.0),
            ("debt_ratio", 300.0 / 1000.0),
            ("debt_to_equity", 300.0 / 700.0),
            ("inventory_turnover", 400.0 / 40.0),
            ("receivables_turnover", 800.0 / 80.0),
            ("payables_turnover", 400.0 / 160.0),
            ("operating_margin", 120.0 / 800.0),
            ("net_profit_margin", 70.0 / 800.0),
            ("return_on_assets", 70.0 / 1000.0),
            ("return_on_equity", 70.0 / 700.0),
            ("eps", 70.0 / 10.0),
            ("book_per_share", 700.0 / 10.0),
            ("dividend_per_share", 20.0 / 10.0),
        ];
        let r = compute_financial_ratios(&record());
        for (i, (name, value)) in expected.iter().enumerate() {
            assert_eq!(RATIO_NAMES[i], *name);
            assert_eq!(r.0[i], *value, "{name}");
        }
    }

    proptest! {
        #[test]
        fn usd_scaling_preserves_pure_ratios(k in 0.01f64..1000.0, seed in 1.0f64..50.0) {
            let mut rec = record();
            rec.net_income *= seed;
            let base = compute_financial_ratios(&rec);
            let mut scaled = rec.clone();
            for f in [
                &mut scaled.current_assets, &mut scaled.cash, &mut scaled.inventory,
                &mut scaled.current_liabilities, &mut scaled.total_liabilities,
                &mut scaled.total_assets, &mut scaled.equity, &mut scaled.cogs,
                &mut scaled.receivables, &mut scaled.payables, &mut scaled.revenue,
                &mut scaled.operating_income, &mut scaled.net_income,
                &mut scaled.dividends_paid,
            ] {
                *f *= k;
            }
            let s = compute_financial_ratios(&scaled);
            for i in 0..12 {
                prop_assert!((s.0[i] - base.0[i]).abs() <= 1e-12 * base.0[i].abs().max(1.0));
            }
            for i in 12..15 {
                prop_assert!((s.0[i] - k * base.0[i]).abs() <= 1e-12 * (k * base.0[i]).abs().max(1.0));
            }
        }
    }
}
