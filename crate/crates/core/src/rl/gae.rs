//! Generalized advantage estimation.

/// GAE(γ, λ) over one contiguous segment.
///
/// `dones[t]` marks that the episode ended after step `t`, so step `t + 1`
/// (or `last_value` for the final step) is not bootstrapped. Returns
/// `(advantages, returns)` with `returns = advantages + values`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n, "values length");
    assert_eq!(dones.len(), n, "dones length");
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts to zero mean and scales to unit (population) std, with 1e-8 slack.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}
