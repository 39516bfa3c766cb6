//! Centralized actor and critic networks.

use crate::error::Result;
use crate::nn::{init_mlp, mlp_forward, MlpCache, MlpSpec, ParamSet, Tensor2};
use rand::Rng;
use serde::{Deserialize, Serialize};

const LOG_2PI: f64 = 1.8378770664093453;

/// Draw a standard normal via Box–Muller (two uniforms per draw, fully
/// deterministic for a given stream position).
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Gaussian policy over the joint action: an MLP maps the concatenated
/// observation to all drones' action means; a state-independent `log_std`
/// tensor provides the exploration scale per action dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianActor {
    pub spec: MlpSpec,
    pub params: ParamSet,
}

impl GaussianActor {
    pub fn init(
        obs_dim: usize,
        hidden: &[usize],
        act_dim: usize,
        log_std_init: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(act_dim);
        let spec = MlpSpec::new("actor", sizes);
        let mut params = init_mlp(&spec, rng)?;
        params.push(Tensor2::from_data(
            "log_std",
            act_dim,
            1,
            vec![log_std_init; act_dim],
        )?)?;
        Ok(Self { spec, params })
    }

    pub fn act_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.spec.input_dim()
    }

    /// Deterministic mean action (used for evaluation).
    pub fn mean(&self, obs: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        mlp_forward(&self.params, &self.spec, obs)
    }

    pub fn log_stds(&self) -> &[f64] {
        &self.params.get("log_std").expect("log_std tensor").data
    }

    /// Sample `a = mean + sigma * z` and return its log-probability.
    pub fn sample(&self, means: &[f64], rng: &mut impl Rng) -> (Vec<f64>, f64) {
        let stds: Vec<f64> = self.log_stds().iter().map(|l| l.exp()).collect();
        let action: Vec<f64> = means
            .iter()
            .zip(&stds)
            .map(|(m, s)| m + s * standard_normal(rng))
            .collect();
        let logp = self.log_prob(means, &action);
        (action, logp)
    }

    /// Log-density of `action` under `N(means, diag(exp(log_std))^2)`.
    pub fn log_prob(&self, means: &[f64], action: &[f64]) -> f64 {
        let log_stds = self.log_stds();
        let mut logp = 0.0;
        for ((m, a), l) in means.iter().zip(action).zip(log_stds) {
            let std = l.exp();
            let z = (a - m) / std;
            logp += -0.5 * z * z - l - 0.5 * LOG_2PI;
        }
        logp
    }

    /// Gradient of the log-density with respect to the means and log-stds.
    pub fn log_prob_grads(&self, means: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let log_stds = self.log_stds();
        let mut d_mean = Vec::with_capacity(means.len());
        let mut d_log_std = Vec::with_capacity(means.len());
        for ((m, a), l) in means.iter().zip(action).zip(log_stds) {
            let std = l.exp();
            let z = (a - m) / std;
            d_mean.push(z / std);
            d_log_std.push(z * z - 1.0);
        }
        (d_mean, d_log_std)
    }

    /// Clamp the exploration scale parameter into `[lo, hi]`.
    pub fn clamp_log_std(&mut self, lo: f64, hi: f64) {
        let t = self.params.get_mut("log_std").expect("log_std tensor");
        for v in &mut t.data {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Centralized value network: joint observation to one scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub spec: MlpSpec,
    pub params: ParamSet,
}

impl Critic {
    pub fn init(obs_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let spec = MlpSpec::new("critic", sizes);
        let params = init_mlp(&spec, rng)?;
        Ok(Self { spec, params })
    }

    pub fn value(&self, obs: &[f64]) -> Result<(f64, MlpCache)> {
        let (out, cache) = mlp_forward(&self.params, &self.spec, obs)?;
        Ok((out[0], cache))
    }
}
