//! Rollout storage and the flattened training batch built from it.

use crate::features::{NormStats, StateMatrix};
use crate::nets::{PolicySpec, Real, Tensor};

use super::gae::compute_gae;
use super::AlgoError;

/// Writes the network input for `state` into `out` (normalized `f32`):
/// every row for the CNN, the newest row for the MLP.
pub fn encode_observation(
    spec: &PolicySpec,
    state: &StateMatrix,
    norm: &NormStats,
    out: &mut [f32],
) {
    let rows = spec.obs_rows();
    let cols = state.cols();
    debug_assert_eq!(out.len(), rows * cols);
    let first = state.rows() - rows;
    for (r, chunk) in out.chunks_mut(cols).enumerate() {
        norm.normalize_row_into(state.row(first + r), chunk);
    }
}

/// One contiguous run of environment steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub obs_len: usize,
    pub n_actions: usize,
    pub obs: Vec<f32>,
    /// Sampled, unclamped actions.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Scaled rewards.
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Critic estimate of the state after the last step.
    pub bootstrap_value: f64,
}

impl RolloutBuffer {
    pub fn new(obs_len: usize, n_actions: usize) -> Self {
        Self {
            obs_len,
            n_actions,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn obs_at(&self, i: usize) -> &[f32] {
        &self.obs[i * self.obs_len..(i + 1) * self.obs_len]
    }

    pub fn action_at(&self, i: usize) -> &[f64] {
        &self.actions[i * self.n_actions..(i + 1) * self.n_actions]
    }
}

/// Samples from one or more rollouts with advantages attached.
#[derive(Debug, Clone, Default)]
pub struct TrainBatch {
    pub obs_len: usize,
    pub n_actions: usize,
    pub obs: Vec<f32>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl TrainBatch {
    /// Runs GAE on each segment separately and concatenates the results.
    pub fn from_rollouts(
        bufs: &[RolloutBuffer],
        gamma: f64,
        lambda: f64,
    ) -> Result<Self, AlgoError> {
        let first = bufs.first().ok_or(AlgoError::EmptyRollout)?;
        let mut out = TrainBatch {
            obs_len: first.obs_len,
            n_actions: first.n_actions,
            ..TrainBatch::default()
        };
        for b in bufs {
            if b.is_empty() {
                return Err(AlgoError::EmptyRollout);
            }
            if b.log_probs.iter().any(|v| !v.is_finite()) {
                return Err(AlgoError::NonFinite("rollout log-probability"));
            }
            let (adv, ret) = compute_gae(
                &b.rewards,
                &b.values,
                &b.dones,
                b.bootstrap_value,
                gamma,
                lambda,
            )?;
            out.obs.extend_from_slice(&b.obs);
            out.actions.extend_from_slice(&b.actions);
            out.log_probs.extend_from_slice(&b.log_probs);
            out.values.extend_from_slice(&b.values);
            out.advantages.extend(adv);
            out.returns.extend(ret);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    /// Gathers the samples at `idx`.
    pub fn gather(&self, idx: &[usize]) -> MiniBatch {
        let mut mb = MiniBatch {
            obs: Vec::with_capacity(idx.len() * self.obs_len),
            actions: Vec::with_capacity(idx.len() * self.n_actions),
            ..MiniBatch::default()
        };
        for &i in idx {
            mb.obs
                .extend_from_slice(&self.obs[i * self.obs_len..(i + 1) * self.obs_len]);
            mb.actions
                .extend_from_slice(&self.actions[i * self.n_actions..(i + 1) * self.n_actions]);
            mb.log_probs.push(self.log_probs[i]);
            mb.advantages.push(self.advantages[i]);
            mb.returns.push(self.returns[i]);
        }
        mb
    }
}

/// A gathered slice of a [`TrainBatch`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MiniBatch {
    pub obs: Vec<f32>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn obs_tensor<F: Real>(&self, spec: &PolicySpec) -> Tensor<F> {
        Tensor::new(
            spec.obs_shape(self.len()),
            self.obs.iter().map(|x| F::of(*x as f64)).collect(),
        )
    }
}

/// Shifts and scales `adv` to mean 0 and (population) standard deviation 1.
/// Batches of one are left unchanged.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn normalized_advantages_are_standard(adv in proptest::collection::vec(-100.0f64..100.0, 2..128)) {
            let spread = adv.iter().cloned().fold(f64::MIN, f64::max) - adv.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-3);
            let mut a = adv.clone();
            normalize_advantages(&mut a);
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((std - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_advantage_untouched() {
        let mut a = vec![3.5];
        normalize_advantages(&mut a);
        assert_eq!(a, vec![3.5]);
    }

    #[test]
    fn segments_do_not_bootstrap_into_each_other() {
        let seg = |r: f64, boot: f64| RolloutBuffer {
            obs_len: 1,
            n_actions: 1,
            obs: vec![0.0],
            actions: vec![0.0],
            log_probs: vec![-1.0],
            values: vec![0.0],
            rewards: vec![r],
            dones: vec![false],
            bootstrap_value: boot,
        };
        let b = TrainBatch::from_rollouts(&[seg(1.0, 10.0), seg(2.0, 20.0)], 0.5, 1.0).unwrap();
        assert_eq!(b.advantages, vec![1.0 + 5.0, 2.0 + 10.0]);
        assert_eq!(b.gather(&[1]).returns, vec![12.0]);
    }
}
