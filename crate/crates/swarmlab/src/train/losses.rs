//! Scalar loss functions of the training objective.
//!
//! These are the pure, batch-level definitions used for logging and tests;
//! the trainer computes the same quantities (and their gradients) sample by
//! sample during mini-batch optimization.

use crate::error::{Error, Result};

/// Clipped surrogate policy loss.
///
/// `L = -mean(min(r_t * A_t, clip(r_t, 1-eps, 1+eps) * A_t))` with
/// `r_t = exp(logp_new - logp_old)`. Minimizing `L` maximizes the clipped
/// surrogate objective.
pub fn ppo_loss(
    logp_new: &[f64],
    logp_old: &[f64],
    advantages: &[f64],
    clip_epsilon: f64,
) -> Result<f64> {
    if logp_new.len() != logp_old.len() || logp_new.len() != advantages.len() {
        return Err(Error::argument(format!(
            "ppo loss: mismatched batch lengths {}/{}/{}",
            logp_new.len(),
            logp_old.len(),
            advantages.len()
        )));
    }
    if logp_new.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, ((ln, lo), a)) in logp_new.iter().zip(logp_old).zip(advantages).enumerate() {
        let ratio = (ln - lo).exp();
        if !ratio.is_finite() {
            return Err(Error::Numeric(format!(
                "ppo loss: non-finite ratio at sample {i} (logp_new={ln}, logp_old={lo})"
            )));
        }
        let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
        total += (ratio * a).min(clipped * a);
    }
    Ok(-total / logp_new.len() as f64)
}

/// Mean squared error between value predictions and targets.
pub fn value_loss(values: &[f64], targets: &[f64]) -> Result<f64> {
    if values.len() != targets.len() {
        return Err(Error::argument(format!(
            "value loss: {} values vs {} targets",
            values.len(),
            targets.len()
        )));
    }
    if values.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = values
        .iter()
        .zip(targets)
        .map(|(v, t)| (v - t) * (v - t))
        .sum();
    Ok(total / values.len() as f64)
}

/// Per-sample effective advantage of the constrained objective:
/// `A - sum_j theta_j * (A_cj + d_j)`.
///
/// With all CBF parameters zero this is exactly the unconstrained advantage.
pub fn effective_advantage(
    advantage: f64,
    theta: &[f64],
    cost_advantages: &[f64],
    cost_gaps: &[f64],
) -> Result<f64> {
    if theta.len() != cost_advantages.len() || theta.len() != cost_gaps.len() {
        return Err(Error::argument(format!(
            "effective advantage: constraint counts {}/{}/{}",
            theta.len(),
            cost_advantages.len(),
            cost_gaps.len()
        )));
    }
    let penalty: f64 = theta
        .iter()
        .zip(cost_advantages)
        .zip(cost_gaps)
        .map(|((t, a), d)| t * (a + d))
        .sum();
    Ok(advantage - penalty)
}

/// Weighted total loss `L_PPO + c1 * L_V + c2 * L_CBF`.
pub fn total_loss(l_ppo: f64, l_value: f64, l_cbf: f64, c1: f64, c2: f64) -> Result<f64> {
    if c1 < 0.0 || c2 < 0.0 {
        return Err(Error::argument(format!(
            "loss coefficients must be non-negative, got c1={c1}, c2={c2}"
        )));
    }
    Ok(l_ppo + c1 * l_value + c2 * l_cbf)
}
