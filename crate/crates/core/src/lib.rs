//! Matrix-state deep reinforcement learning for stock trading.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: price/fundamentals ingestion, financial ratios, calendar
//!   alignment and synthetic markets.
//! - [`features`]: daily feature vectors and the sliding-window state matrix.
//! - [`env`]: the trading MDP with share accounting and turbulence monitoring.
//! - [`metrics`]: Sharpe ratio, drawdown and cost summaries.
//! - [`nets`]: CNN and MLP actor-critic networks on a small autodiff core.
//! - [`algo`]: PPO and A2C training, rollouts and greedy evaluation.

pub mod algo;
pub mod data;
pub mod env;
pub mod features;
pub mod metrics;
pub mod nets;
