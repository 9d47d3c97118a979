//! The collect-then-update training loop.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::MarketDataset;
use crate::env::{EnvConfig, TradingEnv};
use crate::features::NormStats;
use crate::nets::{
    forward, init_params, Checkpoint, CheckpointMeta, CheckpointSpec, ForwardMode, Parameters,
    PolicySpec, Tape, BN_MOMENTUM,
};

use super::a2c::{a2c_update, A2cConfig};
use super::buffer::TrainBatch;
use super::history::HistoryRow;
use super::optim::{Adam, AdamConfig, RmsProp, RmsPropConfig};
use super::ppo::{ppo_update, PpoConfig};
use super::rollout::{collect_parallel, Collector, EpisodeSnapshot};
use super::{AlgoError, UpdateStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AlgoConfig {
    Ppo(PpoConfig),
    A2c(A2cConfig),
}

impl AlgoConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            AlgoConfig::Ppo(_) => "ppo",
            AlgoConfig::A2c(_) => "a2c",
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            AlgoConfig::Ppo(c) => c.horizon,
            AlgoConfig::A2c(c) => c.horizon,
        }
    }

    pub fn set_horizon(&mut self, h: usize) {
        match self {
            AlgoConfig::Ppo(c) => c.horizon = h,
            AlgoConfig::A2c(c) => c.horizon = h,
        }
    }

    fn gae(&self) -> (f64, f64) {
        match self {
            AlgoConfig::Ppo(c) => (c.gamma, c.gae_lambda),
            AlgoConfig::A2c(c) => (c.gamma, c.gae_lambda),
        }
    }

    pub fn validate(&self) -> Result<(), AlgoError> {
        match self {
            AlgoConfig::Ppo(c) => c.validate(),
            AlgoConfig::A2c(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub seed: u64,
    /// Environments collected concurrently; 1 keeps training bit-reproducible.
    pub n_envs: usize,
    /// Minibatch size of the batch-norm statistics refresh.
    pub bn_refresh_batch: usize,
    /// Standardize network inputs with statistics of the training data.
    /// When off, raw feature values reach the network.
    pub normalize_obs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            seed: 0,
            n_envs: 1,
            bn_refresh_batch: 64,
            normalize_obs: true,
        }
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<HistoryRow>,
    /// The episode reported by the last history row.
    pub last_episode: EpisodeSnapshot,
    pub diagnostics: Vec<UpdateStats>,
}

enum Optimizer {
    Adam(Adam),
    RmsProp(RmsProp),
}

/// Re-estimates batch-norm running statistics from train-mode passes over
/// shuffled slices of the latest rollout.
pub fn refresh_batch_norm<R: Rng + ?Sized>(
    spec: &PolicySpec,
    params: &mut Parameters<f32>,
    batch: &TrainBatch,
    minibatch: usize,
    rng: &mut R,
) -> Result<(), AlgoError> {
    if spec.bn_layers().is_empty() {
        return Ok(());
    }
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    idx.shuffle(rng);
    for chunk in idx.chunks(minibatch.max(2)) {
        if chunk.len() < 2 {
            continue;
        }
        let mb = batch.gather(chunk);
        let stats = {
            let mut tape = Tape::new();
            forward(
                &mut tape,
                spec,
                params,
                mb.obs_tensor(spec),
                ForwardMode::Train,
            )?
            .bn_stats
        };
        for (name, s) in &stats {
            params.update_running(name, s, BN_MOMENTUM);
        }
    }
    Ok(())
}

/// Trains a policy on `ds`.
///
/// `on_update` sees each history row as it is produced.
pub fn train(
    ds: Arc<MarketDataset>,
    env_cfg: &EnvConfig,
    spec: &PolicySpec,
    algo: &AlgoConfig,
    cfg: &TrainConfig,
    split_boundary: Option<usize>,
    mut on_update: impl FnMut(&HistoryRow),
) -> Result<TrainOutcome, AlgoError> {
    spec.validate()?;
    algo.validate()?;
    if cfg.total_steps == 0 || cfg.n_envs == 0 {
        return Err(AlgoError::Config(
            "total_steps and n_envs must be positive".into(),
        ));
    }
    let norm = Arc::new(if cfg.normalize_obs {
        NormStats::from_dataset(&ds, env_cfg.initial_balance, env_cfg.hmax)
    } else {
        NormStats::identity(spec.features())
    });
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_params::<f32>(spec, master.random())?;
    let env = TradingEnv::new(ds.clone(), env_cfg.clone())?;
    let mut collectors = (0..cfg.n_envs)
        .map(|_| Collector::new(env.clone(), spec, norm.clone(), master.random()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut update_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut opt = match algo {
        AlgoConfig::Ppo(c) => Optimizer::Adam(Adam::new(
            AdamConfig {
                lr: c.lr,
                ..AdamConfig::default()
            },
            &params,
        )),
        AlgoConfig::A2c(c) => Optimizer::RmsProp(RmsProp::new(
            RmsPropConfig {
                lr: c.lr,
                alpha: c.rms_alpha,
                eps: c.rms_eps,
            },
            &params,
        )),
    };
    let (gamma, lambda) = algo.gae();
    let k = cfg.n_envs as u64;
    let mut steps = 0u64;
    let mut history = Vec::new();
    let mut diagnostics = Vec::new();
    while steps < cfg.total_steps {
        let per_env = (algo.horizon() as u64).min((cfg.total_steps - steps).div_ceil(k)) as usize;
        let bufs = if collectors.len() == 1 {
            vec![collectors[0].collect(spec, &params, per_env)?]
        } else {
            collect_parallel(&mut collectors, spec, &params, per_env)?
        };
        let batch = TrainBatch::from_rollouts(&bufs, gamma, lambda)?;
        let stats = match (algo, &mut opt) {
            (AlgoConfig::Ppo(c), Optimizer::Adam(o)) => {
                ppo_update(spec, &mut params, o, &batch, c, &mut update_rng)?
            }
            (AlgoConfig::A2c(c), Optimizer::RmsProp(o)) => {
                a2c_update(spec, &mut params, o, &batch, c)?
            }
            _ => unreachable!("optimizer chosen from the algorithm"),
        };
        refresh_batch_norm(
            spec,
            &mut params,
            &batch,
            cfg.bn_refresh_batch,
            &mut update_rng,
        )?;
        steps += (per_env * collectors.len()) as u64;
        let ep = collectors[0].reported_stats();
        let row = HistoryRow {
            update_idx: history.len() as u64 + 1,
            env_steps: steps,
            episode_reward: ep.episode_reward,
            portfolio_value: ep.portfolio_value,
            sharpe: ep.sharpe,
            total_cost: ep.total_cost,
            mean_turbulence: ep.mean_turbulence,
        };
        log::debug!(
            "update {} steps {} reward {:.6} value {:.2} loss {:.6}",
            row.update_idx,
            row.env_steps,
            row.episode_reward,
            row.portfolio_value,
            stats.total
        );
        on_update(&row);
        history.push(row);
        diagnostics.push(stats);
    }
    let checkpoint = Checkpoint {
        spec: CheckpointSpec {
            policy: spec.clone(),
            tickers: ds.tickers().to_vec(),
            env: env_cfg.clone(),
            obs_norm: (*norm).clone(),
        },
        params,
        meta: CheckpointMeta {
            seed: cfg.seed,
            env_steps: steps,
            updates: history.len() as u64,
            algo: algo.kind().into(),
            split_boundary,
        },
    };
    Ok(TrainOutcome {
        checkpoint,
        last_episode: collectors[0].reported_snapshot(),
        history,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_market, Regime};
    use crate::nets::{CnnSpec, MlpSpec};

    fn small() -> (Arc<MarketDataset>, EnvConfig) {
        let ds = Arc::new(generate_synthetic_market(3, 120, 2, Regime::Mixed).unwrap());
        (
            ds,
            EnvConfig {
                window: 10,
                turbulence_lookback: 20,
                ..EnvConfig::default()
            },
        )
    }

    fn mlp() -> PolicySpec {
        PolicySpec::Mlp(MlpSpec {
            features: 35,
            n_actions: 2,
            hidden: vec![8, 8],
        })
    }

    #[test]
    fn total_equal_to_horizon_gives_one_update() {
        let (ds, env) = small();
        let algo = AlgoConfig::Ppo(PpoConfig {
            horizon: 32,
            epochs: 2,
            minibatch: 8,
            ..PpoConfig::default()
        });
        let cfg = TrainConfig {
            total_steps: 32,
            ..TrainConfig::default()
        };
        let out = train(ds, &env, &mlp(), &algo, &cfg, None, |_| {}).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.history[0].env_steps, 32);
        assert_eq!(out.checkpoint.meta.updates, 1);
    }

    #[test]
    fn deterministic_per_seed() {
        let (ds, env) = small();
        let spec = PolicySpec::Cnn(CnnSpec {
            window: 10,
            features: 35,
            n_actions: 2,
            conv1_filters: 2,
            conv2_filters: 3,
            dense: 8,
            ..CnnSpec::default()
        });
        let algo = AlgoConfig::Ppo(PpoConfig {
            horizon: 40,
            epochs: 2,
            minibatch: 16,
            ..PpoConfig::default()
        });
        let cfg = TrainConfig {
            total_steps: 120,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train(ds.clone(), &env, &spec, &algo, &cfg, None, |_| {}).unwrap();
        let b = train(ds, &env, &spec, &algo, &cfg, None, |_| {}).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(
            a.checkpoint.to_bytes().unwrap(),
            b.checkpoint.to_bytes().unwrap()
        );
        assert_ne!(
            a.checkpoint.params.get("bn1.running_var").data(),
            &[1.0, 1.0]
        );
    }

    #[test]
    fn a2c_runs_and_counts_updates() {
        let (ds, env) = small();
        let algo = AlgoConfig::A2c(A2cConfig::default());
        let cfg = TrainConfig {
            total_steps: 23,
            ..TrainConfig::default()
        };
        let out = train(ds, &env, &mlp(), &algo, &cfg, None, |_| {}).unwrap();
        assert_eq!(out.history.len(), 5);
        assert_eq!(out.history.last().unwrap().env_steps, 23);
    }

    #[test]
    fn parallel_collection_runs() {
        let (ds, env) = small();
        let algo = AlgoConfig::A2c(A2cConfig::default());
        let cfg = TrainConfig {
            total_steps: 40,
            n_envs: 2,
            ..TrainConfig::default()
        };
        let out = train(ds, &env, &mlp(), &algo, &cfg, None, |_| {}).unwrap();
        assert_eq!(out.history.last().unwrap().env_steps, 40);
    }
}
