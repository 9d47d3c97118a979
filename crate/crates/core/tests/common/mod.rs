//! Helpers shared by the integration tests.

#![allow(dead_code)]

use matrix_trader::algo::MiniBatch;
use matrix_trader::nets::{
    forward_eval, gaussian_log_density, CnnSpec, Parameters, PolicySpec, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A 12-day, 17-feature CNN small enough for finite differences.
pub fn mini_cnn() -> PolicySpec {
    PolicySpec::Cnn(CnnSpec {
        window: 12,
        features: 17,
        n_actions: 3,
        conv1_filters: 4,
        conv2_filters: 6,
        kernel: 3,
        pad: 1,
        pool: 2,
        dense: 16,
    })
}

/// Random observations and actions; old log-probabilities sit a random
/// offset away from the current policy so ratios spread around 1.
pub fn random_minibatch(
    spec: &PolicySpec,
    params: &Parameters<f64>,
    n: usize,
    seed: u64,
) -> MiniBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs: Vec<f32> = (0..n * spec.obs_len())
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let obs_f64 = Tensor::new(spec.obs_shape(n), obs.iter().map(|x| *x as f64).collect());
    let outs = forward_eval(spec, params, obs_f64).unwrap();
    let a = spec.n_actions();
    let mut mb = MiniBatch {
        obs,
        ..MiniBatch::default()
    };
    for out in &outs {
        let action: Vec<f64> = (0..a).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lp = gaussian_log_density(&out.mean, &out.log_std, &action);
        mb.actions.extend_from_slice(&action);
        mb.log_probs.push(lp + rng.random_range(-0.4..0.4));
        mb.advantages.push(rng.random_range(-1.0..1.0));
        mb.returns.push(rng.random_range(-1.0..1.0));
    }
    mb
}

/// Largest relative error between analytic gradients and central
/// differences over `n_coords` random parameter coordinates.
///
/// `loss` returns the scalar loss and the gradient of every learnable
/// tensor, in `Parameters::learnable` order.
pub fn finite_difference_check(
    params: &Parameters<f64>,
    loss: impl Fn(&Parameters<f64>) -> (f64, Vec<Tensor<f64>>),
    n_coords: usize,
    h: f64,
    seed: u64,
) -> f64 {
    let (_, grads) = loss(params);
    let names: Vec<String> = params.learnable.keys().cloned().collect();
    let sizes: Vec<usize> = names.iter().map(|n| params.get(n).len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_coords {
        let mut flat = rng.random_range(0..total);
        let mut t = 0;
        while flat >= sizes[t] {
            flat -= sizes[t];
            t += 1;
        }
        let mut p = params.clone();
        let x0 = params.get(&names[t]).data()[flat];
        p.get_mut(&names[t]).data_mut()[flat] = x0 + h;
        let plus = loss(&p).0;
        p.get_mut(&names[t]).data_mut()[flat] = x0 - h;
        let minus = loss(&p).0;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads[t].data()[flat];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// A small synthetic market, environment config and CNN sized for it.
pub fn small_setup(
    tickers: usize,
    days: usize,
    seed: u64,
) -> (
    std::sync::Arc<matrix_trader::data::MarketDataset>,
    matrix_trader::env::EnvConfig,
    PolicySpec,
) {
    use matrix_trader::data::{generate_synthetic_market, Regime};
    use matrix_trader::env::EnvConfig;
    use matrix_trader::features::FeatureLayout;
    let ds = generate_synthetic_market(seed, days, tickers, Regime::Mixed).unwrap();
    let env = EnvConfig {
        window: 20,
        turbulence_lookback: 40,
        ..EnvConfig::default()
    };
    let spec = PolicySpec::Cnn(CnnSpec {
        window: 20,
        features: FeatureLayout::new(tickers).width(),
        n_actions: tickers,
        conv1_filters: 4,
        conv2_filters: 8,
        kernel: 3,
        pad: 1,
        pool: 2,
        dense: 32,
    });
    (std::sync::Arc::new(ds), env, spec)
}
