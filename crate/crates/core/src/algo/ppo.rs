//! Proximal policy optimization with the clipped surrogate objective.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nets::{
    forward, gradients, ForwardMode, ForwardOutput, Parameters, PolicySpec, Real, Tape, Tensor, Var,
};

use super::buffer::{normalize_advantages, MiniBatch, TrainBatch};
use super::optim::{clip_grad_norm, Adam};
use super::{AlgoError, LossParts, UpdateStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub lr: f64,
    pub horizon: usize,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            epochs: 10,
            minibatch: 64,
            vf_coef: 0.5,
            ent_coef: 0.0,
            lr: 3e-4,
            horizon: 2048,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), AlgoError> {
        let err = |m: &str| Err(AlgoError::Config(format!("ppo: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return err("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return err("gae_lambda must be in [0, 1]");
        }
        if self.clip_eps.is_nan() || self.clip_eps <= 0.0 {
            return err("clip_eps must be positive");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.horizon == 0 {
            return err("epochs, minibatch and horizon must be positive");
        }
        if !(self.lr > 0.0 && self.max_grad_norm > 0.0) {
            return err("lr and max_grad_norm must be positive");
        }
        if !(self.vf_coef.is_finite() && self.ent_coef.is_finite()) {
            return err("loss coefficients must be finite");
        }
        Ok(())
    }
}

/// `min(ρ·Â, clamp(ρ, 1 − ε, 1 + ε)·Â)` for one sample.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Tape handles of a recorded PPO loss.
#[derive(Debug)]
pub struct PpoLoss<F> {
    pub total: Var,
    pub ratio: Var,
    pub forward: ForwardOutput<F>,
    pub parts: LossParts,
}

/// Records the PPO loss for `mb` (advantages used as given).
///
/// Log-ratios are formed inside the Gaussian density node, against the
/// stored collection log-probabilities.
pub fn ppo_loss<'p, F: Real>(
    tape: &mut Tape<'p, F>,
    spec: &PolicySpec,
    params: &'p Parameters<F>,
    mb: &MiniBatch,
    cfg: &PpoConfig,
) -> Result<PpoLoss<F>, AlgoError> {
    let n = mb.len();
    let fwd = forward(tape, spec, params, mb.obs_tensor(spec), ForwardMode::Eval)?;
    let log_ratio = tape.gaussian_log_prob(fwd.mean, fwd.log_std, &mb.actions, Some(&mb.log_probs));
    let ratio = tape.exp(log_ratio);
    let adv = tape.constant(Tensor::from_f64(vec![n], &mb.advantages));
    let surr1 = tape.mul(ratio, adv);
    let clipped = tape.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let surr2 = tape.mul(clipped, adv);
    let surr = tape.minimum(surr1, surr2);
    let surr_mean = tape.mean(surr);
    let actor = tape.scale(surr_mean, -1.0);
    let returns = tape.constant(Tensor::from_f64(vec![n], &mb.returns));
    let err = tape.sub(fwd.value, returns);
    let sq = tape.square(err);
    let critic = tape.mean(sq);
    let entropy = tape.gaussian_entropy(fwd.log_std);
    let weighted_critic = tape.scale(critic, cfg.vf_coef);
    let weighted_entropy = tape.scale(entropy, cfg.ent_coef);
    let partial = tape.add(actor, weighted_critic);
    let total = tape.sub(partial, weighted_entropy);
    let parts = LossParts {
        actor: tape.value(actor).item().as_f64(),
        critic: tape.value(critic).item().as_f64(),
        entropy: tape.value(entropy).item().as_f64(),
        total: tape.value(total).item().as_f64(),
    };
    Ok(PpoLoss {
        total,
        ratio,
        forward: fwd,
        parts,
    })
}

/// Probability ratios of every batch sample under `params`.
pub fn ppo_ratios(
    spec: &PolicySpec,
    params: &Parameters<f32>,
    batch: &TrainBatch,
) -> Result<Vec<f64>, AlgoError> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mb = batch.gather(&idx);
    let mut tape = Tape::new();
    let loss = ppo_loss(&mut tape, spec, params, &mb, &PpoConfig::default())?;
    Ok(tape.value(loss.ratio).to_f64_vec())
}

/// Epochs of shuffled minibatch descent on the clipped objective.
pub fn ppo_update<R: Rng + ?Sized>(
    spec: &PolicySpec,
    params: &mut Parameters<f32>,
    opt: &mut Adam,
    batch: &TrainBatch,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, AlgoError> {
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats::default();
    let mut count = 0usize;
    let mut clipped = 0usize;
    let mut seen = 0usize;
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.minibatch) {
            let mut mb = batch.gather(chunk);
            normalize_advantages(&mut mb.advantages);
            let (mut grads, parts, ratios) = {
                let mut tape = Tape::new();
                let loss = ppo_loss(&mut tape, spec, params, &mb, cfg)?;
                if !loss.parts.total.is_finite() {
                    return Err(AlgoError::NonFiniteLoss(loss.parts));
                }
                let g = gradients(&tape, loss.total, &loss.forward.bound)?;
                (g, loss.parts, tape.value(loss.ratio).to_f64_vec())
            };
            let norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
            opt.step(params, &grads);
            clipped += ratios
                .iter()
                .filter(|r| (**r - 1.0).abs() > cfg.clip_eps)
                .count();
            seen += ratios.len();
            stats.accumulate(&parts, norm);
            count += 1;
        }
    }
    stats.finish(count);
    stats.clip_fraction = clipped as f64 / seen.max(1) as f64;
    Ok(stats)
}
