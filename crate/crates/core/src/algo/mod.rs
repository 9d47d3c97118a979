//! PPO and A2C training over the trading environment.
//!
//! - [`rollout`]: experience collection with automatic restarts.
//! - [`gae`]: advantage estimation.
//! - [`ppo`], [`a2c`]: losses and update steps.
//! - [`trainer`]: the training loop and its history.
//! - [`evaluate`]: greedy evaluation of a checkpoint.

use thiserror::Error;

pub mod a2c;
pub mod buffer;
pub mod evaluate;
pub mod gae;
pub mod history;
pub mod optim;
pub mod ppo;
pub mod rollout;
pub mod trainer;

pub use a2c::{a2c_loss, a2c_update, A2cConfig};
pub use buffer::{encode_observation, normalize_advantages, MiniBatch, RolloutBuffer, TrainBatch};
pub use evaluate::{
    evaluate, make_hold_only, read_equity_csv, write_equity_csv, EvaluationOutcome, EQUITY_HEADER,
};
pub use gae::compute_gae;
pub use history::{read_history_csv, write_history_csv, HistoryRow, HISTORY_HEADER};
pub use optim::{clip_grad_norm, Adam, AdamConfig, RmsProp, RmsPropConfig};
pub use ppo::{clipped_surrogate, ppo_loss, ppo_ratios, ppo_update, PpoConfig};
pub use rollout::{collect_parallel, sharpe_or_zero, Collector, EpisodeSnapshot, EpisodeStats};
pub use trainer::{refresh_batch_norm, train, AlgoConfig, TrainConfig, TrainOutcome};

use crate::env::EnvError;
use crate::nets::NetError;

#[derive(Debug, Error)]
pub enum AlgoError {
    #[error("rewards ({rewards}), values ({values}) and dones ({dones}) differ in length")]
    LengthMismatch {
        rewards: usize,
        values: usize,
        dones: usize,
    },
    #[error("rollout is empty")]
    EmptyRollout,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("non-finite loss (actor {}, critic {}, entropy {}); update aborted", .0.actor, .0.critic, .0.entropy)]
    NonFiniteLoss(LossParts),
    #[error("{0}")]
    Config(String),
    #[error("spec/dataset mismatch: {0}")]
    SpecMismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Components of one recorded loss.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub actor: f64,
    pub critic: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Averages over the gradient steps of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub actor: f64,
    pub critic: f64,
    pub entropy: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub clip_fraction: f64,
}

impl UpdateStats {
    fn accumulate(&mut self, p: &LossParts, grad_norm: f64) {
        self.actor += p.actor;
        self.critic += p.critic;
        self.entropy += p.entropy;
        self.total += p.total;
        self.grad_norm += grad_norm;
    }

    fn finish(&mut self, n: usize) {
        let n = n.max(1) as f64;
        self.actor /= n;
        self.critic /= n;
        self.entropy /= n;
        self.total /= n;
        self.grad_norm /= n;
    }
}
