//! First-order optimizers over a parameter store.

use serde::{Deserialize, Serialize};

use crate::nets::{Parameters, Tensor};

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor<f32>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| (*x as f64) * (*x as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = (max_norm / (norm + 1e-6)) as f32;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &Parameters<f32>) -> Self {
        let zeros = || {
            params
                .learnable
                .values()
                .map(|p| vec![0.0; p.len()])
                .collect()
        };
        Self {
            cfg,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Parameters<f32>, grads: &[Tensor<f32>]) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1 as f32, self.cfg.beta2 as f32);
        let c1 = 1.0 - self.cfg.beta1.powi(self.t);
        let c2 = 1.0 - self.cfg.beta2.powi(self.t);
        let step = (self.cfg.lr / c1) as f32;
        let c2_sqrt = c2.sqrt() as f32;
        let eps = self.cfg.eps as f32;
        for (((p, g), m), v) in params
            .learnable
            .values_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((x, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *x -= step * *m / (v.sqrt() / c2_sqrt + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            lr: 7e-4,
            alpha: 0.99,
            eps: 1e-5,
        }
    }
}

/// Root-mean-square propagation.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub cfg: RmsPropConfig,
    sq: Vec<Vec<f32>>,
}

impl RmsProp {
    pub fn new(cfg: RmsPropConfig, params: &Parameters<f32>) -> Self {
        Self {
            cfg,
            sq: params
                .learnable
                .values()
                .map(|p| vec![0.0; p.len()])
                .collect(),
        }
    }

    pub fn step(&mut self, params: &mut Parameters<f32>, grads: &[Tensor<f32>]) {
        let (lr, a, eps) = (
            self.cfg.lr as f32,
            self.cfg.alpha as f32,
            self.cfg.eps as f32,
        );
        for ((p, g), sq) in params.learnable.values_mut().zip(grads).zip(&mut self.sq) {
            for ((x, g), s) in p.data_mut().iter_mut().zip(g.data()).zip(sq.iter_mut()) {
                *s = a * *s + (1.0 - a) * g * g;
                *x -= lr * g / (s.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f32) -> Parameters<f32> {
        let mut p = Parameters::new();
        p.learnable
            .insert("w".into(), Tensor::new(vec![1], vec![v]));
        p
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = vec![Tensor::new(vec![2], vec![3.0f32, 4.0])];
        let n = clip_grad_norm(&mut g, 1.0);
        assert!((n - 5.0).abs() < 1e-12);
        let after: f32 = g[0].data().iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((after - 1.0).abs() < 1e-5);
        let mut small = vec![Tensor::new(vec![1], vec![0.1f32])];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.1]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // After one step m̂ = g and v̂ = g², so the update is lr·g/(|g|+ε).
        let mut p = single(1.0);
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &p,
        );
        opt.step(&mut p, &[Tensor::new(vec![1], vec![2.5])]);
        assert!((p.get("w").data()[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn rmsprop_first_step() {
        let mut p = single(0.0);
        let mut opt = RmsProp::new(
            RmsPropConfig {
                lr: 0.01,
                ..RmsPropConfig::default()
            },
            &p,
        );
        opt.step(&mut p, &[Tensor::new(vec![1], vec![2.0])]);
        let expected = -0.01 * 2.0 / ((0.01f64 * 4.0).sqrt() + 1e-5);
        assert!((p.get("w").data()[0] as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = single(3.0);
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            &p,
        );
        for _ in 0..2000 {
            let x = p.get("w").data()[0];
            opt.step(&mut p, &[Tensor::new(vec![1], vec![2.0 * (x - 1.0)])]);
        }
        assert!((p.get("w").data()[0] - 1.0).abs() < 1e-2);
    }
}
