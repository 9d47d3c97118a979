//! Synchronous advantage actor-critic.

use serde::{Deserialize, Serialize};

use crate::nets::{
    forward, gradients, ForwardMode, ForwardOutput, Parameters, PolicySpec, Real, Tape, Tensor, Var,
};

use super::buffer::{MiniBatch, TrainBatch};
use super::optim::{clip_grad_norm, RmsProp};
use super::{AlgoError, LossParts, UpdateStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct A2cConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub horizon: usize,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
}

impl Default for A2cConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 1.0,
            horizon: 5,
            vf_coef: 0.5,
            ent_coef: 0.0,
            lr: 7e-4,
            max_grad_norm: 0.5,
            rms_alpha: 0.99,
            rms_eps: 1e-5,
        }
    }
}

impl A2cConfig {
    pub fn validate(&self) -> Result<(), AlgoError> {
        let err = |m: &str| Err(AlgoError::Config(format!("a2c: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return err("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return err("gae_lambda must be in [0, 1]");
        }
        if self.horizon == 0 {
            return err("horizon must be positive");
        }
        if !(self.lr > 0.0 && self.max_grad_norm > 0.0 && self.rms_eps > 0.0) {
            return err("lr, max_grad_norm and rms_eps must be positive");
        }
        if !(0.0..1.0).contains(&self.rms_alpha) {
            return err("rms_alpha must be in [0, 1)");
        }
        if !(self.vf_coef.is_finite() && self.ent_coef.is_finite()) {
            return err("loss coefficients must be finite");
        }
        Ok(())
    }
}

/// Tape handles of a recorded A2C loss.
#[derive(Debug)]
pub struct A2cLoss<F> {
    pub total: Var,
    pub actor: Var,
    pub forward: ForwardOutput<F>,
    pub parts: LossParts,
}

/// Records `−mean(log π(a|s)·Â) + c_v·mean((v − R)²) − c_e·H`.
/// Advantages enter as constants, so the actor term does not reach the
/// critic through them.
pub fn a2c_loss<'p, F: Real>(
    tape: &mut Tape<'p, F>,
    spec: &PolicySpec,
    params: &'p Parameters<F>,
    mb: &MiniBatch,
    cfg: &A2cConfig,
) -> Result<A2cLoss<F>, AlgoError> {
    let n = mb.len();
    let fwd = forward(tape, spec, params, mb.obs_tensor(spec), ForwardMode::Eval)?;
    let log_prob = tape.gaussian_log_prob(fwd.mean, fwd.log_std, &mb.actions, None);
    let adv = tape.constant(Tensor::from_f64(vec![n], &mb.advantages));
    let weighted = tape.mul(log_prob, adv);
    let m = tape.mean(weighted);
    let actor = tape.scale(m, -1.0);
    let returns = tape.constant(Tensor::from_f64(vec![n], &mb.returns));
    let err = tape.sub(fwd.value, returns);
    let sq = tape.square(err);
    let critic = tape.mean(sq);
    let entropy = tape.gaussian_entropy(fwd.log_std);
    let wc = tape.scale(critic, cfg.vf_coef);
    let we = tape.scale(entropy, cfg.ent_coef);
    let partial = tape.add(actor, wc);
    let total = tape.sub(partial, we);
    let parts = LossParts {
        actor: tape.value(actor).item().as_f64(),
        critic: tape.value(critic).item().as_f64(),
        entropy: tape.value(entropy).item().as_f64(),
        total: tape.value(total).item().as_f64(),
    };
    Ok(A2cLoss {
        total,
        actor,
        forward: fwd,
        parts,
    })
}

/// One gradient step over the whole batch.
pub fn a2c_update(
    spec: &PolicySpec,
    params: &mut Parameters<f32>,
    opt: &mut RmsProp,
    batch: &TrainBatch,
    cfg: &A2cConfig,
) -> Result<UpdateStats, AlgoError> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mb = batch.gather(&idx);
    let (mut grads, parts) = {
        let mut tape = Tape::new();
        let loss = a2c_loss(&mut tape, spec, params, &mb, cfg)?;
        if !loss.parts.total.is_finite() {
            return Err(AlgoError::NonFiniteLoss(loss.parts));
        }
        (
            gradients(&tape, loss.total, &loss.forward.bound)?,
            loss.parts,
        )
    };
    let norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
    opt.step(params, &grads);
    let mut stats = UpdateStats::default();
    stats.accumulate(&parts, norm);
    stats.finish(1);
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_params, MlpSpec};

    fn spec() -> PolicySpec {
        PolicySpec::Mlp(MlpSpec {
            features: 2,
            n_actions: 1,
            hidden: vec![3],
        })
    }

    #[test]
    fn zero_advantage_trains_only_the_critic() {
        let spec = spec();
        let params = init_params::<f64>(&spec, 1).unwrap();
        let mb = MiniBatch {
            obs: vec![0.3, -0.2, 0.5, 0.1],
            actions: vec![0.4, -0.1],
            log_probs: vec![0.0; 2],
            advantages: vec![0.0; 2],
            returns: vec![1.0, -1.0],
        };
        let cfg = A2cConfig::default();
        let mut tape = Tape::new();
        let loss = a2c_loss(&mut tape, &spec, &params, &mb, &cfg).unwrap();
        assert_eq!(loss.parts.actor, 0.0);
        let g = gradients(&tape, loss.total, &loss.forward.bound).unwrap();
        for (name, grad) in params.learnable.keys().zip(&g) {
            let nonzero = grad.data().iter().any(|x| *x != 0.0);
            if name.starts_with("actor") || name == "log_std" {
                assert!(!nonzero, "{name} moved");
            }
            if name.starts_with("critic") {
                assert!(nonzero, "{name} did not move");
            }
        }
    }

    #[test]
    fn actor_loss_arithmetic() {
        // Choose an action so that log π(a|s) = −2 exactly, then Â = 3.
        let spec = spec();
        let params = init_params::<f64>(&spec, 5).unwrap();
        let obs = vec![0.2, 0.7];
        let out = crate::nets::forward_eval(&spec, &params, Tensor::new(vec![1, 2], obs.clone()))
            .unwrap();
        let half_log_tau = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let z = (2.0 * (2.0 - half_log_tau)).sqrt();
        let mb = MiniBatch {
            obs: obs.iter().map(|x| *x as f32).collect(),
            actions: vec![out[0].mean[0] + z],
            log_probs: vec![-2.0],
            advantages: vec![3.0],
            returns: vec![0.0],
        };
        let mut tape = Tape::new();
        let loss = a2c_loss(&mut tape, &spec, &params, &mb, &A2cConfig::default()).unwrap();
        assert!((loss.parts.actor - 6.0).abs() < 1e-6);
    }
}
