//! Market turbulence: Mahalanobis distance of today's cross-sectional return
//! vector from its recent history.

use nalgebra::{DMatrix, DVector};

use crate::data::MarketDataset;

/// Singular values below `PINV_RCOND · σ_max` are treated as zero.
pub const PINV_RCOND: f64 = 1e-12;

/// `(y − μ)ᵀ Σ⁺ (y − μ)` where μ and Σ are the mean and sample covariance of
/// `history` (one return vector per row). Returns 0 with fewer than two rows.
pub fn mahalanobis(history: &[Vec<f64>], today: &[f64]) -> f64 {
    let n = history.len();
    let d = today.len();
    if n < 2 || d == 0 {
        return 0.0;
    }
    let mut mean = DVector::zeros(d);
    for row in history {
        mean += DVector::from_column_slice(row);
    }
    mean /= n as f64;
    let mut centred = DMatrix::zeros(n, d);
    for (i, row) in history.iter().enumerate() {
        for j in 0..d {
            centred[(i, j)] = row[j] - mean[j];
        }
    }
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    let svd = cov.svd(true, true);
    let smax = svd.singular_values.max();
    if smax <= 0.0 {
        return 0.0;
    }
    let pinv = match svd.pseudo_inverse(PINV_RCOND * smax) {
        Ok(p) => p,
        Err(_) => return 0.0,
    };
    let dev = DVector::from_column_slice(today) - mean;
    let q = (dev.transpose() * pinv * &dev)[(0, 0)];
    q.max(0.0)
}

fn returns_on(ds: &MarketDataset, t: usize) -> Vec<f64> {
    ds.prices_on(t)
        .iter()
        .zip(ds.prices_on(t - 1))
        .map(|(p, q)| p / q - 1.0)
        .collect()
}

/// Turbulence on day `t` using the `lookback` daily returns before it.
/// Zero when `t < lookback + 1`.
pub fn compute_turbulence(ds: &MarketDataset, t: usize, lookback: usize) -> f64 {
    if lookback == 0 || t < lookback + 1 || t >= ds.n_days() {
        return 0.0;
    }
    let history: Vec<Vec<f64>> = (t - lookback..t).map(|s| returns_on(ds, s)).collect();
    mahalanobis(&history, &returns_on(ds, t))
}

/// [`compute_turbulence`] for every day of the dataset.
pub fn turbulence_series(ds: &MarketDataset, lookback: usize) -> Vec<f64> {
    (0..ds.n_days())
        .map(|t| compute_turbulence(ds, t, lookback))
        .collect()
}
