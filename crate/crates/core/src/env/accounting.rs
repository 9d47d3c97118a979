//! Share accounting: action scaling, order execution and valuation.

/// Cash, integer share holdings and calendar position.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioState {
    pub balance: f64,
    pub holdings: Vec<i64>,
    pub day_index: usize,
}

impl PortfolioState {
    pub fn new(balance: f64, n_tickers: usize, day_index: usize) -> Self {
        Self {
            balance,
            holdings: vec![0; n_tickers],
            day_index,
        }
    }
}

/// One executed order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Execution {
    pub ticker: usize,
    /// Signed executed shares: negative for sells.
    pub shares: i64,
    pub price: f64,
    pub cost: f64,
    pub balance_after: f64,
}

/// Outcome of [`apply_trades`].
#[derive(Debug, Clone, PartialEq)]
pub struct TradeOutcome {
    pub portfolio: PortfolioState,
    pub cost_paid: f64,
    /// Executed share deltas per ticker after clipping.
    pub executed: Vec<i64>,
    /// Executions in the order they were applied.
    pub fills: Vec<Execution>,
}

/// `Σ prices · holdings + balance`.
pub fn portfolio_value(p: &PortfolioState, prices: &[f64]) -> f64 {
    prices
        .iter()
        .zip(&p.holdings)
        .map(|(q, h)| q * *h as f64)
        .sum::<f64>()
        + p.balance
}

/// Clamps each component into [−1, 1]; NaN becomes 0.
pub fn clamp_action(a: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|x| if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) })
        .collect()
}

/// Share deltas `trunc(a · hmax)`; actions are clamped to [−1, 1] first.
pub fn scale_action(a: &[f64], hmax: i64) -> Vec<i64> {
    clamp_action(a)
        .into_iter()
        .map(|x| (x * hmax as f64).trunc() as i64)
        .collect()
}

/// Executes share deltas at `prices`.
///
/// All sells run first, then all buys, each group in ticker order. Sells are
/// clipped to the shares held; each buy is clipped to the largest count whose
/// cost-inclusive debit fits in the cash left at that point.
pub fn apply_trades(
    p: &PortfolioState,
    prices: &[f64],
    deltas: &[i64],
    cost_rate: f64,
) -> TradeOutcome {
    debug_assert_eq!(prices.len(), deltas.len());
    let mut out = p.clone();
    let mut executed = vec![0i64; deltas.len()];
    let mut fills = Vec::new();
    let mut cost_paid = 0.0;

    for (k, (&delta, &price)) in deltas.iter().zip(prices).enumerate() {
        if delta >= 0 {
            continue;
        }
        let shares = (-delta).min(out.holdings[k]);
        if shares == 0 {
            continue;
        }
        let notional = shares as f64 * price;
        let cost = notional * cost_rate;
        out.balance += notional * (1.0 - cost_rate);
        out.holdings[k] -= shares;
        cost_paid += cost;
        executed[k] = -shares;
        fills.push(Execution {
            ticker: k,
            shares: -shares,
            price,
            cost,
            balance_after: out.balance,
        });
    }

    for (k, (&delta, &price)) in deltas.iter().zip(prices).enumerate() {
        if delta <= 0 {
            continue;
        }
        let unit = price * (1.0 + cost_rate);
        let mut shares = delta.min((out.balance / unit).floor().max(0.0) as i64);
        while shares > 0 && shares as f64 * price * (1.0 + cost_rate) > out.balance {
            shares -= 1;
        }
        if shares == 0 {
            continue;
        }
        let notional = shares as f64 * price;
        let cost = notional * cost_rate;
        out.balance -= notional * (1.0 + cost_rate);
        out.holdings[k] += shares;
        cost_paid += cost;
        executed[k] = shares;
        fills.push(Execution {
            ticker: k,
            shares,
            price,
            cost,
            balance_after: out.balance,
        });
    }

    TradeOutcome {
        portfolio: out,
        cost_paid,
        executed,
        fills,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_buy_is_hmax() {
        assert_eq!(scale_action(&[1.0], 1000), vec![1000]);
        assert_eq!(scale_action(&[0.0], 1000), vec![0]);
        assert_eq!(scale_action(&[-0.2537], 1000), vec![-253]);
        assert_eq!(
            scale_action(&[7.0, -3.0, f64::NAN], 1000),
            vec![1000, -1000, 0]
        );
    }

    #[test]
    fn buy_accounting() {
        let p = PortfolioState::new(1_000_000.0, 1, 0);
        let out = apply_trades(&p, &[100.0], &[10], 0.001);
        // 10 · 100 · 1.001 = 1001
        assert!((out.portfolio.balance - 998_999.0).abs() < 1e-9);
        assert_eq!(out.portfolio.holdings, vec![10]);
        assert!((out.cost_paid - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sell_clipped_to_holdings() {
        let mut p = PortfolioState::new(0.0, 1, 0);
        p.holdings[0] = 3;
        let out = apply_trades(&p, &[10.0], &[-5], 0.0);
        assert_eq!(out.executed, vec![-3]);
        assert_eq!(out.portfolio.holdings, vec![0]);
        assert_eq!(out.portfolio.balance, 30.0);
    }

    #[test]
    fn hold_changes_nothing() {
        let mut p = PortfolioState::new(500.0, 3, 4);
        p.holdings = vec![1, 2, 3];
        let out = apply_trades(&p, &[1.0, 2.0, 3.0], &[0, 0, 0], 0.001);
        assert_eq!(out.portfolio, p);
        assert_eq!(out.cost_paid, 0.0);
        assert!(out.fills.is_empty());
    }

    #[test]
    fn sells_fund_buys() {
        let mut p = PortfolioState::new(0.0, 2, 0);
        p.holdings = vec![0, 10];
        // buy on ticker 0 is only affordable with the proceeds of ticker 1
        let out = apply_trades(&p, &[50.0, 10.0], &[5, -10], 0.0);
        assert_eq!(out.executed, vec![2, -10]);
        assert_eq!(out.portfolio.balance, 0.0);
        assert_eq!(out.fills[0].ticker, 1);
    }

    #[test]
    fn buys_allocated_in_ticker_order() {
        let p = PortfolioState::new(1000.0, 2, 0);
        let out = apply_trades(&p, &[100.0, 100.0], &[8, 8], 0.0);
        assert_eq!(out.executed, vec![8, 2]);
    }

    #[test]
    fn value_is_dot_product_plus_cash() {
        let mut p = PortfolioState::new(0.0, 1, 0);
        assert_eq!(portfolio_value(&p, &[100.0]), 0.0);
        p.holdings[0] = 10;
        assert_eq!(portfolio_value(&p, &[100.0]), 1000.0);
        p.holdings[0] = 0;
        p.balance = 42.0;
        assert_eq!(portfolio_value(&p, &[100.0]), 42.0);
    }

    fn arb_case() -> impl Strategy<Value = (f64, Vec<i64>, Vec<f64>, Vec<i64>, f64)> {
        (1usize..6).prop_flat_map(|d| {
            (
                0.0f64..1e6,
                proptest::collection::vec(0i64..5000, d),
                proptest::collection::vec(1.0f64..500.0, d),
                proptest::collection::vec(-3000i64..3000, d),
                0.0f64..0.05,
            )
        })
    }

    proptest! {
        #[test]
        fn cash_is_conserved((balance, holdings, prices, deltas, c) in arb_case()) {
            let p = PortfolioState { balance, holdings: holdings.clone(), day_index: 0 };
            let out = apply_trades(&p, &prices, &deltas, c);
            let mut expected = balance;
            for (k, e) in out.executed.iter().enumerate() {
                if *e < 0 {
                    expected += (-e) as f64 * prices[k] * (1.0 - c);
                }
            }
            for (k, e) in out.executed.iter().enumerate() {
                if *e > 0 {
                    expected -= *e as f64 * prices[k] * (1.0 + c);
                }
            }
            prop_assert!((out.portfolio.balance - expected).abs() <= 1e-9 * balance.max(1.0));
            prop_assert!(out.portfolio.balance >= 0.0);
            prop_assert!(out.portfolio.holdings.iter().all(|h| *h >= 0));
            for (k, e) in out.executed.iter().enumerate() {
                prop_assert!(e.abs() <= deltas[k].abs());
                prop_assert!(*e == 0 || e.signum() == deltas[k].signum());
                prop_assert_eq!(out.portfolio.holdings[k], holdings[k] + e);
            }
            let traded = out.executed.iter().any(|e| *e != 0);
            if c > 0.0 {
                prop_assert_eq!(out.cost_paid > 0.0, traded);
            }
        }

        #[test]
        fn cost_grows_with_trade_size(price in 1.0f64..500.0, held in 0i64..5000,
                                      a in -3000i64..3000, b in -3000i64..3000, c in 1e-4f64..0.05) {
            // ample cash: no buy is clipped by contention
            let p = PortfolioState { balance: 1e9, holdings: vec![held], day_index: 0 };
            let (small, large) = if a.abs() <= b.abs() { (a, b) } else { (b, a) };
            let large = if small.signum() == large.signum() || small == 0 { large } else { -large };
            let cs = apply_trades(&p, &[price], &[small], c).cost_paid;
            let cl = apply_trades(&p, &[price], &[large], c).cost_paid;
            prop_assert!(cs <= cl);
        }
    }
}
