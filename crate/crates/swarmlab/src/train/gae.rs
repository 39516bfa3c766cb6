//! Generalized advantage estimation and related batch statistics.

use crate::error::{Error, Result};

/// GAE(lambda) over one trajectory segment.
///
/// `values` must hold one more entry than `rewards`: the trailing entry is
/// the bootstrap value of the state after the last transition (zero when the
/// segment ended in a terminal state).
///
/// `delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t`,
/// `A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}`,
/// returns `V_t^target = A_t + V_t`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let t_len = rewards.len();
    if values.len() != t_len + 1 || dones.len() != t_len {
        return Err(Error::argument(format!(
            "gae: got {} rewards, {} values, {} dones; need T, T+1, T",
            t_len,
            values.len(),
            dones.len()
        )));
    }
    let mut advantages = vec![0.0; t_len];
    let mut running = 0.0;
    for t in (0..t_len).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * not_done - values[t];
        running = delta + gamma * lambda * not_done * running;
        advantages[t] = running;
    }
    let returns = advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect();
    Ok((advantages, returns))
}

/// Plain discounted returns `R_t = x_t + gamma * (1 - done_t) * R_{t+1}`
/// (bootstrap 0 past the segment end). Used for the per-constraint expected
/// cost estimates.
pub fn discounted_returns(signal: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; signal.len()];
    let mut running = 0.0;
    for t in (0..signal.len()).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        running = signal[t] + gamma * not_done * running;
        out[t] = running;
    }
    out
}

/// Normalize to zero mean, unit std (guarded for near-constant batches).
pub fn normalize_in_place(values: &mut [f64]) {
    if values.len() < 2 {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for v in values.iter_mut() {
        *v = (*v - mean) / std;
    }
}

/// `1 - Var(returns - values) / Var(returns)`, clamped to 0 when the returns
/// are (near-)constant. Never exceeds 1.
pub fn explained_variance(returns: &[f64], values: &[f64]) -> f64 {
    if returns.len() != values.len() || returns.is_empty() {
        return 0.0;
    }
    let n = returns.len() as f64;
    let mean_ret = returns.iter().sum::<f64>() / n;
    let var_ret = returns
        .iter()
        .map(|r| (r - mean_ret) * (r - mean_ret))
        .sum::<f64>()
        / n;
    if var_ret < 1e-12 {
        return 0.0;
    }
    let residuals: Vec<f64> = returns.iter().zip(values).map(|(r, v)| r - v).collect();
    let mean_res = residuals.iter().sum::<f64>() / n;
    let var_res = residuals
        .iter()
        .map(|r| (r - mean_res) * (r - mean_res))
        .sum::<f64>()
        / n;
    1.0 - var_res / var_ret
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_step_gae_for_any_lambda() {
        // T=1: A_0 = r_0 + gamma * V_1 - V_0 regardless of lambda.
        for lambda in [0.0, 0.37, 0.95, 1.0] {
            let (adv, ret) =
                compute_gae(&[2.0], &[0.5, 1.0], &[false], 0.9, lambda).unwrap();
            assert!((adv[0] - (2.0 + 0.9 - 0.5)).abs() < 1e-15);
            assert!((ret[0] - (adv[0] + 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn lambda_zero_reduces_to_td_residuals() {
        let rewards = [1.0, -0.5, 2.0, 0.25];
        let values = [0.3, 0.8, -0.2, 0.6, 1.1];
        let dones = [false, false, true, false];
        let (adv, _) = compute_gae(&rewards, &values, &dones, 0.95, 0.0).unwrap();
        for t in 0..4 {
            let not_done = if dones[t] { 0.0 } else { 1.0 };
            let delta = rewards[t] + 0.95 * values[t + 1] * not_done - values[t];
            assert!((adv[t] - delta).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_brute_force_telescoping_oracle() {
        // Brute force: A_t = sum_k (gamma*lambda)^k delta_{t+k}, stopping at
        // episode boundaries.
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..500 {
            let t_len = rng.gen_range(1..=10);
            let rewards: Vec<f64> = (0..t_len).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let values: Vec<f64> = (0..=t_len).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let dones: Vec<bool> = (0..t_len).map(|_| rng.gen_bool(0.2)).collect();
            let (gamma, lambda) = (0.95, 0.95);

            let (adv, ret) = compute_gae(&rewards, &values, &dones, gamma, lambda).unwrap();

            for t in 0..t_len {
                let mut expect = 0.0;
                let mut weight = 1.0;
                for k in t..t_len {
                    let not_done = if dones[k] { 0.0 } else { 1.0 };
                    let delta = rewards[k] + gamma * values[k + 1] * not_done - values[k];
                    expect += weight * delta;
                    if dones[k] {
                        break;
                    }
                    weight *= gamma * lambda * not_done;
                }
                assert!(
                    (adv[t] - expect).abs() < 1e-12,
                    "t={t}: {} vs {expect}",
                    adv[t]
                );
                assert!((ret[t] - (adv[t] + values[t])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lambda_one_gamma_one_gives_empirical_return_minus_value() {
        let rewards = [1.0, 2.0, 3.0, 4.0];
        let values = [0.5, -0.5, 1.5, 0.0, 2.0];
        let dones = [false; 4];
        let (adv, _) = compute_gae(&rewards, &values, &dones, 1.0, 1.0).unwrap();
        for t in 0..4 {
            let empirical: f64 = rewards[t..].iter().sum::<f64>() + values[4];
            assert!((adv[t] - (empirical - values[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch_is_argument_error() {
        assert!(compute_gae(&[1.0], &[0.0], &[false], 0.9, 0.9).is_err());
        assert!(compute_gae(&[1.0], &[0.0, 0.0], &[false, true], 0.9, 0.9).is_err());
    }

    #[test]
    fn discounted_returns_respect_done_boundaries() {
        let signal = [1.0, 1.0, 1.0];
        let dones = [false, true, false];
        let out = discounted_returns(&signal, &dones, 0.5);
        assert_eq!(out, vec![1.5, 1.0, 1.0]);
    }

    #[test]
    fn normalization_produces_zero_mean_unit_std() {
        let mut xs: Vec<f64> = (0..100).map(|i| (i as f64) * 0.3 - 7.0).collect();
        normalize_in_place(&mut xs);
        let mean: f64 = xs.iter().sum::<f64>() / xs.len() as f64;
        let var: f64 = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn explained_variance_bounds() {
        let returns = [1.0, 2.0, 3.0, 4.0];
        assert!((explained_variance(&returns, &returns) - 1.0).abs() < 1e-12);
        let offset: Vec<f64> = returns.iter().map(|r| r + 5.0).collect();
        // constant residual: still explains all variance
        assert!((explained_variance(&returns, &offset) - 1.0).abs() < 1e-12);
        let anti: Vec<f64> = returns.iter().map(|r| -r).collect();
        let ev = explained_variance(&returns, &anti);
        assert!(ev < 0.0);
        assert!(ev <= 1.0 + 1e-9);
        // degenerate: constant returns
        assert_eq!(explained_variance(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]), 0.0);
    }
}
