//! Centralized MAPPO training with the attention-CBF penalty coupling.
//!
//! One update cycle: collect on-policy rollouts from a set of environments,
//! compute GAE advantages for the (joint) reward and per-constraint cost
//! signals, then run several epochs of mini-batch optimization of
//!
//! `L = L_PPO + c1 * L_V + c2 * L_CBF`
//!
//! where `L_PPO` uses the *effective* advantage `A - sum_j theta_j (A_cj + d_j)`.
//! The actor descends `L_PPO`, the critic descends `c1 * L_V`, and the CBF
//! network descends `c2 * L_CBF` while *ascending* the `L_PPO` term (it plays
//! the inner minimizer of the constrained min–max objective, so its gradient
//! from the policy term is negated). Target copies of all three networks are
//! soft-updated after every cycle.
//!
//! The rollout buffer is strictly on-policy: it is rebuilt from scratch every
//! update, so no transition is ever optimized under two behavior policies.

mod gae;
mod losses;
mod policy;
mod rollout;
mod trainer;

pub use gae::{compute_gae, discounted_returns, explained_variance, normalize_in_place};
pub use losses::{effective_advantage, ppo_loss, total_loss, value_loss};
pub use policy::{Critic, GaussianActor};
pub use rollout::{
    collect_rollout, policy_observation, DroneCtx, EnvRunner, EpisodeOutcome, EpisodeWindow,
    RolloutBuffer, Transition, OBSTACLE_OFFSET_CLIP,
};
pub use trainer::{train, Checkpoint, MetricsRecord, Trainer};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Hyperparameters of one training run. Defaults follow the reference
/// configuration (three per-network learning rates, clip 0.1, gamma = lambda
/// = 0.95, CBF-loss coefficient 0.1); everything else is desk-scale tuning
/// surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub cbf_lr: f64,
    /// PPO clip ratio epsilon.
    pub clip_epsilon: f64,
    pub gae_lambda: f64,
    pub discount: f64,
    /// Value-loss coefficient c1.
    pub value_coef: f64,
    /// CBF-loss coefficient c2. Zero disables the CBF pathway entirely
    /// (plain MAPPO baseline when combined with `disable_cbf`).
    pub cbf_coef: f64,
    /// Soft target-update coefficient tau.
    pub tau: f64,
    /// Steps collected per environment per update.
    pub horizon: usize,
    pub num_envs: usize,
    /// Optimization epochs per update.
    pub epochs: usize,
    pub minibatch: usize,
    /// Number of collect/update cycles.
    pub updates: u64,
    /// Cost threshold c_ij shared by all constraint slots.
    pub cost_threshold: f64,
    /// Force theta_CBF to zero in the policy objective (baseline ablation).
    pub disable_cbf: bool,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Drone-state embedding width.
    pub h_dim: usize,
    /// Attention key dimension d.
    pub key_dim: usize,
    /// Hidden sizes of the CBF head.
    pub head_hidden: Vec<usize>,
    pub log_std_init: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// Inverse-clearance CBF-target constants.
    pub target_kappa: f64,
    pub target_w_max: f64,
    pub target_delta: f64,
    /// Write a checkpoint every N updates (0 = only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            actor_lr: 5e-4,
            critic_lr: 5e-3,
            cbf_lr: 1e-3,
            clip_epsilon: 0.1,
            gae_lambda: 0.95,
            discount: 0.95,
            value_coef: 0.5,
            cbf_coef: 0.1,
            tau: 0.005,
            horizon: 2048,
            num_envs: 4,
            epochs: 10,
            minibatch: 256,
            updates: 100,
            cost_threshold: 0.0,
            disable_cbf: false,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            h_dim: 32,
            key_dim: 32,
            head_hidden: vec![1024, 256],
            log_std_init: -0.5,
            log_std_min: -5.0,
            log_std_max: 1.0,
            target_kappa: 0.5,
            target_w_max: 10.0,
            target_delta: 0.01,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let cfg: TrainConfig = toml::from_str(&text).map_err(|e| Error::Validation {
            field: "<train config>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("cbf_lr", self.cbf_lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::validation(name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::validation(
                "clip_epsilon",
                format!("must be in (0, 1), got {}", self.clip_epsilon),
            ));
        }
        for (name, v) in [("gae_lambda", self.gae_lambda), ("discount", self.discount)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::validation(name, format!("must be in (0, 1], got {v}")));
            }
        }
        for (name, v) in [("value_coef", self.value_coef), ("cbf_coef", self.cbf_coef)] {
            if v < 0.0 {
                return Err(Error::validation(name, format!("must be >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::validation(
                "tau",
                format!("must be in [0, 1], got {}", self.tau),
            ));
        }
        for (name, v) in [
            ("horizon", self.horizon),
            ("num_envs", self.num_envs),
            ("epochs", self.epochs),
            ("minibatch", self.minibatch),
        ] {
            if v == 0 {
                return Err(Error::validation(name, "must be >= 1"));
            }
        }
        if self.log_std_min > self.log_std_max {
            return Err(Error::validation(
                "log_std_min",
                "must not exceed log_std_max",
            ));
        }
        Ok(())
    }
}
