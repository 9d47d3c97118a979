//! Experience collection with automatic episode restarts.

use std::sync::Arc;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{TradeLogRow, TradingEnv};
use crate::features::NormStats;
use crate::metrics::{cumulative_cost, sharpe};
use crate::nets::{forward_eval, sample_action, Parameters, PolicySpec, Tensor};

use super::buffer::{encode_observation, RolloutBuffer};
use super::AlgoError;

/// Copy of one episode's curves, for writing to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSnapshot {
    pub steps: usize,
    /// Sum of scaled rewards.
    pub episode_reward: f64,
    pub equity: Vec<f64>,
    pub dates: Vec<NaiveDate>,
    pub trade_log: Vec<TradeLogRow>,
    pub turbulence_sum: f64,
}

/// Summary numbers of an episode as reported in training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub episode_reward: f64,
    pub portfolio_value: f64,
    /// Annualized Sharpe of the equity curve, 0 while undefined.
    pub sharpe: f64,
    /// Sum of the trade-log cost column.
    pub total_cost: f64,
    pub mean_turbulence: f64,
}

/// Annualized Sharpe ratio, or 0 when it is undefined (too few points or a
/// flat curve).
pub fn sharpe_or_zero(equity: &[f64]) -> f64 {
    sharpe(equity, 0.0, true).unwrap_or(0.0)
}

fn stats(
    reward: f64,
    equity: &[f64],
    log: &[TradeLogRow],
    turbulence_sum: f64,
    steps: usize,
) -> EpisodeStats {
    EpisodeStats {
        episode_reward: reward,
        portfolio_value: *equity.last().expect("equity curve starts at reset"),
        sharpe: sharpe_or_zero(equity),
        total_cost: cumulative_cost(log).total_cost,
        mean_turbulence: if steps == 0 {
            0.0
        } else {
            turbulence_sum / steps as f64
        },
    }
}

impl EpisodeSnapshot {
    pub fn stats(&self) -> EpisodeStats {
        stats(
            self.episode_reward,
            &self.equity,
            &self.trade_log,
            self.turbulence_sum,
            self.steps,
        )
    }
}

/// Drives one environment with a stochastic policy.
///
/// Episodes always start on the first day of the dataset; when one ends the
/// environment is reset and collection continues, with the done flag marking
/// the boundary.
#[derive(Debug)]
pub struct Collector {
    env: TradingEnv,
    norm: Arc<NormStats>,
    obs: Vec<f32>,
    episode_reward: f64,
    turbulence_sum: f64,
    completed: Option<EpisodeSnapshot>,
    episodes_completed: usize,
    rng: ChaCha8Rng,
}

impl Collector {
    pub fn new(
        mut env: TradingEnv,
        spec: &PolicySpec,
        norm: Arc<NormStats>,
        seed: u64,
    ) -> Result<Self, AlgoError> {
        let width = env.dataset().n_tickers();
        if spec.n_actions() != width || norm.width() != spec.features() {
            return Err(AlgoError::SpecMismatch(format!(
                "policy has {} actions over {} features; market has {} tickers, normalization {} columns",
                spec.n_actions(),
                spec.features(),
                width,
                norm.width()
            )));
        }
        if spec.obs_rows() > env.config().window {
            return Err(AlgoError::SpecMismatch(format!(
                "policy window {} exceeds environment window {}",
                spec.obs_rows(),
                env.config().window
            )));
        }
        let state = env.reset(0)?;
        if state.cols() != spec.features() {
            return Err(AlgoError::SpecMismatch(format!(
                "state has {} columns, policy expects {}",
                state.cols(),
                spec.features()
            )));
        }
        let mut obs = vec![0.0; spec.obs_len()];
        encode_observation(spec, &state, &norm, &mut obs);
        Ok(Self {
            env,
            norm,
            obs,
            episode_reward: 0.0,
            turbulence_sum: 0.0,
            completed: None,
            episodes_completed: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn env(&self) -> &TradingEnv {
        &self.env
    }

    pub fn episodes_completed(&self) -> usize {
        self.episodes_completed
    }

    /// Runs `n` steps under `params`.
    pub fn collect(
        &mut self,
        spec: &PolicySpec,
        params: &Parameters<f32>,
        n: usize,
    ) -> Result<RolloutBuffer, AlgoError> {
        if n == 0 {
            return Err(AlgoError::EmptyRollout);
        }
        let a = spec.n_actions();
        let mut buf = RolloutBuffer::new(spec.obs_len(), a);
        for _ in 0..n {
            let out = self.evaluate_current(spec, params)?;
            let (action, log_prob) = sample_action(&out, &mut self.rng);
            let step = self.env.step(&action)?;
            buf.obs.extend_from_slice(&self.obs);
            buf.actions.extend_from_slice(&action);
            buf.log_probs.push(log_prob);
            buf.values.push(out.value);
            buf.rewards.push(step.reward);
            buf.dones.push(step.done);
            self.episode_reward += step.reward;
            self.turbulence_sum += step.info.turbulence;
            let state = if step.done {
                self.completed = Some(self.snapshot_current());
                self.episodes_completed += 1;
                self.episode_reward = 0.0;
                self.turbulence_sum = 0.0;
                self.env.reset(0)?
            } else {
                step.next_state
            };
            encode_observation(spec, &state, &self.norm, &mut self.obs);
        }
        buf.bootstrap_value = self.evaluate_current(spec, params)?.value;
        Ok(buf)
    }

    fn evaluate_current(
        &self,
        spec: &PolicySpec,
        params: &Parameters<f32>,
    ) -> Result<crate::nets::GaussianPolicyOutput, AlgoError> {
        let obs = Tensor::new(spec.obs_shape(1), self.obs.clone());
        let mut out = forward_eval(spec, params, obs)?;
        let out = out.pop().expect("batch of one");
        if out.mean.iter().any(|m| !m.is_finite()) || !out.value.is_finite() {
            return Err(AlgoError::NonFinite("policy output"));
        }
        Ok(out)
    }

    fn snapshot_current(&self) -> EpisodeSnapshot {
        EpisodeSnapshot {
            steps: self.env.steps(),
            episode_reward: self.episode_reward,
            equity: self.env.equity_curve().to_vec(),
            dates: self.env.equity_dates().to_vec(),
            trade_log: self.env.trade_log().to_vec(),
            turbulence_sum: self.turbulence_sum,
        }
    }

    /// The episode in progress, or the one that just finished when the
    /// current one has not taken a step yet.
    pub fn reported_stats(&self) -> EpisodeStats {
        match (&self.completed, self.env.steps()) {
            (Some(done), 0) => done.stats(),
            _ => stats(
                self.episode_reward,
                self.env.equity_curve(),
                self.env.trade_log(),
                self.turbulence_sum,
                self.env.steps(),
            ),
        }
    }

    /// Copy of the episode behind [`Self::reported_stats`].
    pub fn reported_snapshot(&self) -> EpisodeSnapshot {
        match (&self.completed, self.env.steps()) {
            (Some(done), 0) => done.clone(),
            _ => self.snapshot_current(),
        }
    }
}

/// Collects `n` steps from each collector on its own thread.
pub fn collect_parallel(
    collectors: &mut [Collector],
    spec: &PolicySpec,
    params: &Parameters<f32>,
    n: usize,
) -> Result<Vec<RolloutBuffer>, AlgoError> {
    std::thread::scope(|s| {
        let handles: Vec<_> = collectors
            .iter_mut()
            .map(|c| s.spawn(move || c.collect(spec, params, n)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("collector thread panicked"))
            .collect()
    })
}
