//! Greedy evaluation of checkpoints.

mod common;

use common::small_setup;
use matrix_trader::algo::{evaluate, make_hold_only, AlgoError};
use matrix_trader::data::generate_synthetic_market;
use matrix_trader::data::Regime;
use matrix_trader::features::NormStats;
use matrix_trader::metrics::{cumulative_cost, sharpe};
use matrix_trader::nets::{init_params, Checkpoint, CheckpointMeta, CheckpointSpec};
use std::sync::Arc;

fn checkpoint(seed: u64) -> (Checkpoint, Arc<matrix_trader::data::MarketDataset>) {
    let (ds, env, policy) = small_setup(3, 100, seed);
    let mut params = init_params::<f32>(&policy, seed).unwrap();
    // Give the actor enough gain to trade.
    for x in params.get_mut("actor.weight").data_mut() {
        *x *= 300.0;
    }
    let ck = Checkpoint {
        spec: CheckpointSpec {
            obs_norm: NormStats::from_dataset(&ds, env.initial_balance, env.hmax),
            tickers: ds.tickers().to_vec(),
            policy,
            env,
        },
        params,
        meta: CheckpointMeta {
            seed,
            env_steps: 0,
            updates: 0,
            algo: "ppo".into(),
            split_boundary: None,
        },
    };
    (ck, ds)
}

#[test]
fn hold_only_policy_keeps_the_initial_balance() {
    let (mut ck, ds) = checkpoint(1);
    make_hold_only(&mut ck.params);
    let out = evaluate(&ck, ds).unwrap();
    assert!(out.trade_log.is_empty());
    assert_eq!(out.report.final_value, ck.spec.env.initial_balance);
    assert!(out.equity.iter().all(|v| *v == ck.spec.env.initial_balance));
    assert_eq!(out.report.sharpe_annual, None);
    assert!(out.mean_actions.iter().all(|a| *a == 0.0));
}

#[test]
fn evaluation_is_deterministic_and_consistent() {
    let (ck, ds) = checkpoint(2);
    let a = evaluate(&ck, ds.clone()).unwrap();
    let b = evaluate(&ck, ds.clone()).unwrap();
    assert_eq!(a, b);
    assert!(!a.trade_log.is_empty());
    assert_eq!(a.equity.len(), ds.n_days() - ck.spec.env.window + 1);
    assert_eq!(a.dates.len(), a.equity.len());
    assert_eq!(
        a.report.total_cost,
        cumulative_cost(&a.trade_log).total_cost
    );
    assert_eq!(a.report.n_trades, a.trade_log.len());
    assert_eq!(a.report.sharpe_daily, sharpe(&a.equity, 0.0, false).ok());
    assert_eq!(a.report.final_value, *a.equity.last().unwrap());
}

#[test]
fn checkpoint_round_trip_preserves_behavior() {
    let (ck, ds) = checkpoint(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.tar");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ck);
    assert_eq!(
        evaluate(&loaded, ds.clone()).unwrap(),
        evaluate(&ck, ds).unwrap()
    );
}

#[test]
fn mismatched_tickers_are_rejected() {
    let (ck, _) = checkpoint(4);
    let other = Arc::new(generate_synthetic_market(4, 100, 2, Regime::Mixed).unwrap());
    assert!(matches!(
        evaluate(&ck, other),
        Err(AlgoError::SpecMismatch(_))
    ));
}
