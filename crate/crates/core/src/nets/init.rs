//! Deterministic parameter initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::params::Parameters;
use super::policy::{Init, PolicySpec};
use super::tensor::{Real, Tensor};
use super::NetError;

/// Row-major `rows × cols` matrix with orthonormal rows (when `rows ≤ cols`)
/// or orthonormal columns, scaled by `gain`.
pub fn orthogonal<R: rand::Rng + ?Sized>(
    rows: usize,
    cols: usize,
    gain: f64,
    rng: &mut R,
) -> Vec<f64> {
    let (k, len) = (rows.min(cols), rows.max(cols));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        // Two Gram-Schmidt passes keep the basis orthogonal to working precision.
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut out = vec![0.0; rows * cols];
    for (i, b) in basis.iter().enumerate() {
        for (j, x) in b.iter().enumerate() {
            let (r, c) = if rows <= cols { (i, j) } else { (j, i) };
            out[r * cols + c] = gain * x;
        }
    }
    out
}

/// Fresh parameters for `spec`; identical for identical seeds.
///
/// Dense weights (`[in, out]`) and conv weights (viewed as
/// `[out, in·kh·kw]`) are orthogonal; everything else is constant.
pub fn init_params<F: Real>(spec: &PolicySpec, seed: u64) -> Result<Parameters<F>, NetError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Parameters::new();
    let make = |shape: &[usize], init: Init, rng: &mut ChaCha8Rng| match init {
        Init::Const(c) => Tensor::full(shape, F::of(c)),
        Init::Orthogonal(gain) => {
            let rows = shape[0];
            let cols = shape[1..].iter().product();
            Tensor::from_f64(shape.to_vec(), &orthogonal(rows, cols, gain, rng))
        }
    };
    for (name, shape, init) in spec.learnable_layout() {
        let t = make(&shape, init, &mut rng);
        params.learnable.insert(name, t);
    }
    for (name, shape, init) in spec.running_layout() {
        let t = make(&shape, init, &mut rng);
        params.running.insert(name, t);
    }
    Ok(params)
}
