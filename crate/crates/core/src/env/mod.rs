//! The stock-trading MDP.
//!
//! Each step values the portfolio at the current close, executes the scaled
//! integer trades at that close, advances one trading day and rewards the
//! scaled change in portfolio value. The observation is the sliding window of
//! daily feature vectors.

mod accounting;
mod trade_log;
mod turbulence;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::MarketDataset;
use crate::features::{
    daily_vector_for_day, init_window, FeatureError, StateMatrix, DEFAULT_WINDOW,
};

pub use accounting::{
    apply_trades, clamp_action, portfolio_value, scale_action, Execution, PortfolioState,
    TradeOutcome,
};
pub use trade_log::{read_trade_log, write_trade_log, TradeLogRow, TRADE_LOG_HEADER};
pub use turbulence::{compute_turbulence, mahalanobis, turbulence_series, PINV_RCOND};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid env config: {0}")]
    Config(String),
    #[error("dataset has {days} days; need more than the {window}-day window")]
    DatasetTooShort { days: usize, window: usize },
    #[error("start index {start} leaves no step: {days} days, window {window}")]
    BadStart {
        start: usize,
        days: usize,
        window: usize,
    },
    #[error("environment has not been reset")]
    NotReset,
    #[error("step called after the episode ended")]
    StepAfterDone,
    #[error("action has {got} components, expected {expected}")]
    ActionWidth { expected: usize, got: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub initial_balance: f64,
    /// Maximum shares per trade per ticker.
    pub hmax: i64,
    /// Fraction of notional charged on every buy and sell.
    pub cost_rate: f64,
    pub reward_scale: f64,
    pub turbulence_lookback: usize,
    pub window: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            initial_balance: 1_000_000.0,
            hmax: 1000,
            cost_rate: 0.001,
            reward_scale: 1e-6,
            turbulence_lookback: 252,
            window: DEFAULT_WINDOW,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let mut problems = Vec::new();
        if !(self.initial_balance.is_finite() && self.initial_balance >= 0.0) {
            problems.push("initial_balance must be finite and >= 0");
        }
        if self.hmax < 1 {
            problems.push("hmax must be >= 1");
        }
        if !(0.0..1.0).contains(&self.cost_rate) {
            problems.push("cost_rate must be in [0, 1)");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            problems.push("reward_scale must be > 0");
        }
        if self.window == 0 {
            problems.push("window must be >= 1");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(EnvError::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub portfolio_value: f64,
    pub cost_paid: f64,
    pub turbulence: f64,
    pub trades_executed: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: StateMatrix,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One trading episode over a shared, immutable dataset.
#[derive(Debug, Clone)]
pub struct TradingEnv {
    ds: Arc<MarketDataset>,
    cfg: EnvConfig,
    turbulence: Arc<Vec<f64>>,
    portfolio: PortfolioState,
    state: Option<StateMatrix>,
    done: bool,
    steps: usize,
    start_day: usize,
    equity: Vec<f64>,
    trade_log: Vec<TradeLogRow>,
    total_cost: f64,
}

impl TradingEnv {
    pub fn new(ds: Arc<MarketDataset>, cfg: EnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        if ds.n_days() <= cfg.window {
            return Err(EnvError::DatasetTooShort {
                days: ds.n_days(),
                window: cfg.window,
            });
        }
        let turbulence = Arc::new(turbulence_series(&ds, cfg.turbulence_lookback));
        let portfolio = PortfolioState::new(cfg.initial_balance, ds.n_tickers(), 0);
        Ok(Self {
            ds,
            cfg,
            turbulence,
            portfolio,
            state: None,
            done: false,
            steps: 0,
            start_day: 0,
            equity: Vec::new(),
            trade_log: Vec::new(),
            total_cost: 0.0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Arc<MarketDataset> {
        &self.ds
    }

    pub fn portfolio(&self) -> &PortfolioState {
        &self.portfolio
    }

    pub fn state(&self) -> Option<&StateMatrix> {
        self.state.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Steps taken since the last reset.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of steps in a full episode from `start`.
    pub fn episode_len(&self, start: usize) -> usize {
        self.ds.n_days().saturating_sub(start + self.cfg.window)
    }

    /// Portfolio value at the current day's close.
    pub fn current_value(&self) -> f64 {
        portfolio_value(&self.portfolio, self.ds.prices_on(self.portfolio.day_index))
    }

    /// Portfolio values since reset: the opening value, then one per step.
    pub fn equity_curve(&self) -> &[f64] {
        &self.equity
    }

    /// Calendar days matching [`Self::equity_curve`].
    pub fn equity_dates(&self) -> &[chrono::NaiveDate] {
        let first = self.start_day + self.cfg.window - 1;
        &self.ds.calendar()[first..first + self.equity.len()]
    }

    pub fn trade_log(&self) -> &[TradeLogRow] {
        &self.trade_log
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    /// Starts an episode whose window covers days `start .. start + window`.
    pub fn reset(&mut self, start: usize) -> Result<StateMatrix, EnvError> {
        let (days, window) = (self.ds.n_days(), self.cfg.window);
        if start + window >= days {
            return Err(EnvError::BadStart {
                start,
                days,
                window,
            });
        }
        self.portfolio = PortfolioState::new(
            self.cfg.initial_balance,
            self.ds.n_tickers(),
            start + window - 1,
        );
        let state = init_window(
            &self.ds,
            start,
            window,
            self.portfolio.balance,
            &self.portfolio.holdings,
        )?;
        self.state = Some(state.clone());
        self.done = false;
        self.steps = 0;
        self.start_day = start;
        self.equity = vec![self.current_value()];
        self.trade_log.clear();
        self.total_cost = 0.0;
        Ok(state)
    }

    /// Executes one action vector with components in [−1, 1].
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        if self.state.is_none() {
            return Err(EnvError::NotReset);
        }
        let d = self.ds.n_tickers();
        if action.len() != d {
            return Err(EnvError::ActionWidth {
                expected: d,
                got: action.len(),
            });
        }
        let t = self.portfolio.day_index;
        let prices = self.ds.prices_on(t);
        let value_before = portfolio_value(&self.portfolio, prices);
        let deltas = scale_action(action, self.cfg.hmax);
        let outcome = apply_trades(&self.portfolio, prices, &deltas, self.cfg.cost_rate);

        self.steps += 1;
        let date = self.ds.calendar()[t];
        let mut holdings = self.portfolio.holdings.clone();
        for fill in &outcome.fills {
            holdings[fill.ticker] += fill.shares;
            let held: f64 = holdings
                .iter()
                .zip(prices)
                .map(|(h, q)| *h as f64 * q)
                .sum();
            self.trade_log.push(TradeLogRow {
                step: self.steps,
                date,
                ticker: self.ds.tickers()[fill.ticker].clone(),
                delta_shares: fill.shares,
                price: fill.price,
                cost: fill.cost,
                balance_after: fill.balance_after,
                value_after: fill.balance_after + held,
            });
        }

        self.portfolio = outcome.portfolio;
        self.portfolio.day_index = t + 1;
        let value_after = portfolio_value(&self.portfolio, self.ds.prices_on(t + 1));
        let reward = (value_after - value_before) * self.cfg.reward_scale;
        self.total_cost += outcome.cost_paid;
        self.equity.push(value_after);

        let row = daily_vector_for_day(
            &self.ds,
            t + 1,
            self.portfolio.balance,
            &self.portfolio.holdings,
        )?;
        let state = self.state.as_mut().expect("checked above");
        state.push_row(&row)?;
        self.done = t + 1 == self.ds.n_days() - 1;

        Ok(StepResult {
            next_state: state.clone(),
            reward,
            done: self.done,
            info: StepInfo {
                portfolio_value: value_after,
                cost_paid: outcome.cost_paid,
                turbulence: self.turbulence[t + 1],
                trades_executed: outcome.executed,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_market, Regime};
    use crate::features::daily_vector_for_day;
    use rand::{Rng, SeedableRng};

    fn env(days: usize, tickers: usize, cost: f64) -> TradingEnv {
        let ds = generate_synthetic_market(42, days, tickers, Regime::Mixed).unwrap();
        TradingEnv::new(
            Arc::new(ds),
            EnvConfig {
                cost_rate: cost,
                ..EnvConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn fresh_reset_is_one_million() {
        let mut e = env(200, 3, 0.001);
        e.reset(0).unwrap();
        assert_eq!(e.current_value(), 1_000_000.0);
    }

    #[test]
    fn resets_are_deterministic() {
        let mut e = env(200, 3, 0.001);
        let a = e.reset(5).unwrap();
        e.step(&[1.0, 1.0, 1.0]).unwrap();
        let b = e.reset(5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ninety_day_dataset_cannot_step() {
        let ds = generate_synthetic_market(42, 100, 1, Regime::Mixed)
            .unwrap()
            .slice_days(0..90)
            .unwrap();
        assert!(matches!(
            TradingEnv::new(Arc::new(ds), EnvConfig::default()),
            Err(EnvError::DatasetTooShort { .. })
        ));
    }

    #[test]
    fn bad_config_rejected() {
        let ds = Arc::new(generate_synthetic_market(42, 100, 1, Regime::Mixed).unwrap());
        for cfg in [
            EnvConfig {
                hmax: 0,
                ..EnvConfig::default()
            },
            EnvConfig {
                cost_rate: 1.0,
                ..EnvConfig::default()
            },
            EnvConfig {
                reward_scale: 0.0,
                ..EnvConfig::default()
            },
        ] {
            assert!(matches!(
                TradingEnv::new(ds.clone(), cfg),
                Err(EnvError::Config(_))
            ));
        }
    }

    #[test]
    fn zero_action_on_flat_prices_has_zero_reward() {
        let ds = generate_synthetic_market(1, 120, 2, Regime::Mixed).unwrap();
        let t = ds.n_days();
        let flat = MarketDataset::new(
            ds.tickers().to_vec(),
            ds.calendar().to_vec(),
            vec![10.0; t * 2],
            vec![1.0; t * 2 * 15],
        )
        .unwrap();
        let mut e = TradingEnv::new(Arc::new(flat), EnvConfig::default()).unwrap();
        e.reset(0).unwrap();
        assert_eq!(e.step(&[0.0, 0.0]).unwrap().reward, 0.0);
    }

    #[test]
    fn one_share_one_dollar_move() {
        let ds = generate_synthetic_market(1, 120, 1, Regime::Mixed).unwrap();
        let t = ds.n_days();
        let mut prices = vec![10.0; t];
        prices[91] = 11.0;
        let ds = MarketDataset::new(
            ds.tickers().to_vec(),
            ds.calendar().to_vec(),
            prices,
            vec![1.0; t * 15],
        )
        .unwrap();
        let cfg = EnvConfig {
            cost_rate: 0.0,
            ..EnvConfig::default()
        };
        let mut e = TradingEnv::new(Arc::new(ds), cfg).unwrap();
        e.reset(0).unwrap();
        // day 89 -> 90: buy one share at 10
        let r = e.step(&[0.001]).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(e.portfolio().holdings, vec![1]);
        // day 90 -> 91: price +1 with one share held
        let r = e.step(&[0.0]).unwrap();
        assert!((r.reward - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn step_after_done_fails() {
        let mut e = env(95, 1, 0.001);
        e.reset(0).unwrap();
        let mut n = 0;
        loop {
            n += 1;
            if e.step(&[0.5]).unwrap().done {
                break;
            }
        }
        assert_eq!(n, e.episode_len(0));
        assert!(matches!(e.step(&[0.5]), Err(EnvError::StepAfterDone)));
    }

    #[test]
    fn step_before_reset_fails() {
        let mut e = env(120, 1, 0.001);
        assert!(matches!(e.step(&[0.5]), Err(EnvError::NotReset)));
        e.reset(0).unwrap();
        assert!(matches!(
            e.step(&[0.5, 0.5]),
            Err(EnvError::ActionWidth { .. })
        ));
    }

    #[test]
    fn hold_only_without_costs_keeps_initial_balance() {
        let mut e = env(200, 3, 0.0);
        e.reset(0).unwrap();
        while !e.step(&[0.0; 3]).unwrap().done {}
        assert_eq!(e.current_value(), 1_000_000.0);
        assert_eq!(e.total_cost(), 0.0);
    }

    #[test]
    fn window_rows_track_history() {
        let mut e = env(300, 3, 0.001);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        e.reset(0).unwrap();
        let mut history = Vec::new();
        for _ in 0..120 {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            e.step(&a).unwrap();
            let p = e.portfolio();
            history.push((p.day_index, p.balance, p.holdings.clone()));
        }
        let state = e.state().unwrap();
        for i in 0..90 {
            let (t, b, h) = &history[120 - 90 + i];
            let v = daily_vector_for_day(e.dataset(), *t, *b, h).unwrap();
            assert_eq!(state.row(i), v.as_slice());
        }
    }

    #[test]
    fn rewards_telescope_and_log_replays() {
        let mut e = env(300, 4, 0.001);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        e.reset(0).unwrap();
        let initial = e.current_value();
        let mut total = 0.0;
        for _ in 0..150 {
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = e.step(&a).unwrap();
            total += r.reward;
            assert!(e.portfolio().balance >= 0.0);
        }
        let final_value = e.current_value();
        let scale = e.config().reward_scale;
        assert!((total / scale - (final_value - initial)).abs() <= 1e-9 * initial);
        let logged: f64 = e.trade_log().iter().map(|r| r.cost).sum();
        assert!((logged - e.total_cost()).abs() <= 1e-9 * e.total_cost().max(1.0));
        assert_eq!(e.equity_curve().len(), 151);
        assert_eq!(*e.equity_curve().last().unwrap(), final_value);
    }
}
