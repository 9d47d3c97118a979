//! Generalized advantage estimation.

use super::AlgoError;

/// Advantages and returns for one contiguous rollout segment.
///
/// `δ_t = r_t + γ·v_{t+1}·(1 − done_t) − v_t` and
/// `A_t = δ_t + γλ·(1 − done_t)·A_{t+1}`, where `v_T` is `bootstrap_value`.
/// Returns are `A_t + v_t`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), AlgoError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(AlgoError::LengthMismatch {
            rewards: n,
            values: values.len(),
            dones: dones.len(),
        });
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}
