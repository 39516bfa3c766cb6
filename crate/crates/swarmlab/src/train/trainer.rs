//! Collect/update training loop, checkpointing, and metrics.

use super::gae::{compute_gae, discounted_returns, explained_variance, normalize_in_place};
use super::policy::{Critic, GaussianActor};
use super::rollout::{collect_rollout, EnvRunner, EpisodeWindow, RolloutBuffer};
use super::TrainConfig;
use crate::attention::{cbf_backward, cbf_forward, cbf_target, CbfSpec, CbfTargetConfig};
use crate::error::{Error, Result};
use crate::nn::{soft_update, AdamState, ParamSet};
use crate::sim::scenario::Scenario;
use crate::sim::{constraint_slots, obs_len};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub update: u64,
    pub env_steps: u64,
    /// Mean episode reward over the recent-episode window (None until the
    /// first episode completes).
    pub mean_ep_reward: Option<f64>,
    /// Mean episode duration in seconds over the window.
    pub mean_ep_time: Option<f64>,
    pub explained_variance: f64,
    pub collision_rate: Option<f64>,
    pub success_rate: Option<f64>,
    pub loss_ppo: f64,
    pub loss_value: f64,
    pub loss_cbf: f64,
    pub loss_total: f64,
}

/// Complete training state: restoring a checkpoint resumes bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub scenario: Scenario,
    pub config: TrainConfig,
    pub update_index: u64,
    pub env_steps: u64,
    pub actor: GaussianActor,
    pub critic: Critic,
    pub cbf_spec: CbfSpec,
    pub cbf: ParamSet,
    pub actor_target: ParamSet,
    pub critic_target: ParamSet,
    pub cbf_target: ParamSet,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub cbf_opt: AdamState,
    pub sample_rng: ChaCha8Rng,
    pub shuffle_rng: ChaCha8Rng,
    pub envs: Vec<EnvRunner>,
    pub episodes: EpisodeWindow,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let file = std::fs::File::open(path.as_ref())?;
        let ckpt: Checkpoint =
            serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Mismatch(format!(
                "checkpoint version {} != supported {CHECKPOINT_VERSION}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    /// Verify the networks fit a (possibly different) evaluation scenario.
    pub fn check_scenario(&self, scenario: &Scenario) -> Result<()> {
        let n = scenario.num_drones();
        let joint = n * obs_len(scenario.obstacle_slots);
        if self.actor.obs_dim() != joint {
            return Err(Error::Mismatch(format!(
                "actor expects joint observation {}, scenario provides {joint}",
                self.actor.obs_dim()
            )));
        }
        if self.actor.act_dim() != 3 * n {
            return Err(Error::Mismatch(format!(
                "actor emits {} action dims, scenario needs {}",
                self.actor.act_dim(),
                3 * n
            )));
        }
        let slots = constraint_slots(n, scenario.obstacle_slots);
        if self.cbf_spec.out_dim != slots {
            return Err(Error::Mismatch(format!(
                "CBF head emits {} constraint slots, scenario needs {slots}",
                self.cbf_spec.out_dim
            )));
        }
        Ok(())
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub scenario: Scenario,
    pub actor: GaussianActor,
    pub critic: Critic,
    pub cbf_spec: CbfSpec,
    pub cbf: ParamSet,
    actor_target: ParamSet,
    critic_target: ParamSet,
    cbf_target_net: ParamSet,
    actor_opt: AdamState,
    critic_opt: AdamState,
    cbf_opt: AdamState,
    sample_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    envs: Vec<EnvRunner>,
    episodes: EpisodeWindow,
    update_index: u64,
    env_steps: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, scenario: Scenario, seed: u64) -> Result<Self> {
        config.validate()?;
        scenario.validate()?;

        let n = scenario.num_drones();
        let joint_obs = n * obs_len(scenario.obstacle_slots);
        let slots = constraint_slots(n, scenario.obstacle_slots);

        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut init_rng = ChaCha8Rng::seed_from_u64(master.gen());
        let sample_rng = ChaCha8Rng::seed_from_u64(master.gen());
        let shuffle_rng = ChaCha8Rng::seed_from_u64(master.gen());

        let actor = GaussianActor::init(
            joint_obs,
            &config.actor_hidden,
            3 * n,
            config.log_std_init,
            &mut init_rng,
        )?;
        let critic = Critic::init(joint_obs, &config.critic_hidden, &mut init_rng)?;
        let cbf_spec = CbfSpec::new(
            config.h_dim,
            config.key_dim,
            config.head_hidden.clone(),
            slots,
        );
        let cbf = crate::attention::init_cbf(&cbf_spec, &mut init_rng)?;

        let envs: Vec<EnvRunner> = (0..config.num_envs)
            .map(|_| EnvRunner::new(scenario.clone(), ChaCha8Rng::seed_from_u64(master.gen())))
            .collect();

        let actor_opt = AdamState::new(config.actor_lr, actor.params.flat_len());
        let critic_opt = AdamState::new(config.critic_lr, critic.params.flat_len());
        let cbf_opt = AdamState::new(config.cbf_lr, cbf.flat_len());

        Ok(Self {
            actor_target: actor.params.clone(),
            critic_target: critic.params.clone(),
            cbf_target_net: cbf.clone(),
            actor_opt,
            critic_opt,
            cbf_opt,
            sample_rng,
            shuffle_rng,
            envs,
            episodes: EpisodeWindow::default(),
            update_index: 0,
            env_steps: 0,
            config,
            scenario,
            actor,
            critic,
            cbf_spec,
            cbf,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        Ok(Self {
            config: ckpt.config,
            scenario: ckpt.scenario,
            actor: ckpt.actor,
            critic: ckpt.critic,
            cbf_spec: ckpt.cbf_spec,
            cbf: ckpt.cbf,
            actor_target: ckpt.actor_target,
            critic_target: ckpt.critic_target,
            cbf_target_net: ckpt.cbf_target,
            actor_opt: ckpt.actor_opt,
            critic_opt: ckpt.critic_opt,
            cbf_opt: ckpt.cbf_opt,
            sample_rng: ckpt.sample_rng,
            shuffle_rng: ckpt.shuffle_rng,
            envs: ckpt.envs,
            episodes: ckpt.episodes,
            update_index: ckpt.update_index,
            env_steps: ckpt.env_steps,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            scenario: self.scenario.clone(),
            config: self.config.clone(),
            update_index: self.update_index,
            env_steps: self.env_steps,
            actor: self.actor.clone(),
            critic: self.critic.clone(),
            cbf_spec: self.cbf_spec.clone(),
            cbf: self.cbf.clone(),
            actor_target: self.actor_target.clone(),
            critic_target: self.critic_target.clone(),
            cbf_target: self.cbf_target_net.clone(),
            actor_opt: self.actor_opt.clone(),
            critic_opt: self.critic_opt.clone(),
            cbf_opt: self.cbf_opt.clone(),
            sample_rng: self.sample_rng.clone(),
            shuffle_rng: self.shuffle_rng.clone(),
            envs: self.envs.clone(),
            episodes: self.episodes.clone(),
        }
    }

    pub fn update_index(&self) -> u64 {
        self.update_index
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Targets of the three networks (for soft-update property checks).
    pub fn targets(&self) -> (&ParamSet, &ParamSet, &ParamSet) {
        (&self.actor_target, &self.critic_target, &self.cbf_target_net)
    }

    fn target_cfg(&self) -> CbfTargetConfig {
        CbfTargetConfig {
            kappa: self.config.target_kappa,
            w_max: self.config.target_w_max,
            delta: self.config.target_delta,
            r_safe: self.scenario.safe_radius,
        }
    }

    /// Run `updates` collect/update cycles, invoking `sink` with each metrics
    /// record as it is produced.
    pub fn run(
        &mut self,
        updates: u64,
        mut sink: impl FnMut(&MetricsRecord) -> Result<()>,
    ) -> Result<Vec<MetricsRecord>> {
        let mut records = Vec::with_capacity(updates as usize);
        for _ in 0..updates {
            let mut sample_rng = self.sample_rng.clone();
            let buffer = collect_rollout(
                &mut self.envs,
                &self.actor,
                &self.critic,
                &self.cbf,
                &self.cbf_spec,
                self.config.horizon,
                &mut sample_rng,
                &mut self.episodes,
            )?;
            self.sample_rng = sample_rng;
            self.env_steps += buffer.len() as u64;

            let record = self.update(&buffer)?;
            sink(&record)?;
            records.push(record);
        }
        Ok(records)
    }

    /// One optimization cycle over a freshly collected buffer.
    fn update(&mut self, buffer: &RolloutBuffer) -> Result<MetricsRecord> {
        let cfg = self.config.clone();
        let n_drones = self.scenario.num_drones();
        let slots_per_drone = constraint_slots(n_drones, self.scenario.obstacle_slots);
        let total_slots = n_drones * slots_per_drone;
        let target_cfg = self.target_cfg();
        self.update_index += 1;

        // --- advantages, returns, cost advantages, cost gaps ---
        let mut index: Vec<(usize, usize)> = Vec::with_capacity(buffer.len());
        let mut advantages = Vec::with_capacity(buffer.len());
        let mut returns = Vec::with_capacity(buffer.len());
        let mut values = Vec::with_capacity(buffer.len());
        let mut cost_advantages: Vec<Vec<f64>> = Vec::with_capacity(buffer.len());
        let mut cost_gap = vec![0.0; total_slots];
        let mut cost_return_count = 0usize;

        for (e, stream) in buffer.per_env.iter().enumerate() {
            let rewards: Vec<f64> = stream.iter().map(|t| t.reward).collect();
            let dones: Vec<bool> = stream.iter().map(|t| t.done).collect();
            let mut vals: Vec<f64> = stream.iter().map(|t| t.value).collect();
            vals.push(buffer.bootstrap[e]);
            let (adv, ret) = compute_gae(&rewards, &vals, &dones, cfg.discount, cfg.gae_lambda)?;

            let mut env_cost_adv = vec![vec![0.0; total_slots]; stream.len()];
            for s in 0..total_slots {
                let signal: Vec<f64> = stream.iter().map(|t| t.costs[s]).collect();
                // cost advantage: GAE over the cost signal with a zero value
                // baseline (no cost critic), same gamma/lambda
                let zeros = vec![0.0; stream.len() + 1];
                let (c_adv, _) =
                    compute_gae(&signal, &zeros, &dones, cfg.discount, cfg.gae_lambda)?;
                // expected-cost estimate: plain discounted cost return
                let c_ret = discounted_returns(&signal, &dones, cfg.discount);
                for t in 0..stream.len() {
                    env_cost_adv[t][s] = c_adv[t];
                    cost_gap[s] += c_ret[t];
                }
            }
            cost_return_count += stream.len();

            for t in 0..stream.len() {
                index.push((e, t));
                advantages.push(adv[t]);
                returns.push(ret[t]);
                values.push(stream[t].value);
            }
            cost_advantages.extend(env_cost_adv);
        }
        if cost_return_count > 0 {
            for g in &mut cost_gap {
                *g = *g / cost_return_count as f64 - cfg.cost_threshold;
            }
        }

        let ev = explained_variance(&returns, &values);
        normalize_in_place(&mut advantages);

        // --- epochs of mini-batch optimization ---
        let mut actor_grads = self.actor.params.zeros_like();
        let mut critic_grads = self.critic.params.zeros_like();
        let mut cbf_grads = self.cbf.zeros_like();

        let mut sum_ppo = 0.0;
        let mut sum_value = 0.0;
        let mut sum_cbf = 0.0;
        let mut loss_samples = 0usize;

        let mut order: Vec<usize> = (0..index.len()).collect();
        for _ in 0..cfg.epochs {
            shuffle(&mut order, &mut self.shuffle_rng);
            for chunk in order.chunks(cfg.minibatch) {
                let scale = 1.0 / chunk.len() as f64;
                actor_grads.zero();
                critic_grads.zero();
                cbf_grads.zero();

                for &i in chunk {
                    let (e, t) = index[i];
                    let tr = &buffer.per_env[e][t];

                    // actor forward + log-prob of the stored action
                    let (means, actor_cache) =
                        crate::nn::mlp_forward(&self.actor.params, &self.actor.spec, &tr.obs)?;
                    let logp_new = self.actor.log_prob(&means, &tr.action);
                    let ratio = (logp_new - tr.log_prob).exp();
                    if !ratio.is_finite() {
                        return Err(Error::Numeric(format!(
                            "non-finite importance ratio at update {}, env {e}, step {t}",
                            self.update_index
                        )));
                    }

                    // CBF forward per drone under the current parameters
                    let mut theta = vec![0.0; total_slots];
                    let mut caches = Vec::with_capacity(n_drones);
                    let mut targets = vec![0.0; total_slots];
                    if !cfg.disable_cbf {
                        for (d, ctx) in tr.drones.iter().enumerate() {
                            let (out, cache) =
                                cbf_forward(&self.cbf, &self.cbf_spec, &ctx.own, &ctx.features)?;
                            theta[d * slots_per_drone..(d + 1) * slots_per_drone]
                                .copy_from_slice(&out.theta);
                            let tgt = cbf_target(&ctx.clearances, &target_cfg);
                            targets[d * slots_per_drone..(d + 1) * slots_per_drone]
                                .copy_from_slice(&tgt);
                            caches.push(cache);
                        }
                    }

                    // effective advantage of the constrained objective
                    let c_adv = &cost_advantages[i];
                    let mut a_eff = advantages[i];
                    for s in 0..total_slots {
                        a_eff -= theta[s] * (c_adv[s] + cost_gap[s]);
                    }

                    let clipped = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
                    let surr_raw = ratio * a_eff;
                    let surr_clip = clipped * a_eff;
                    let raw_branch = surr_raw <= surr_clip;
                    sum_ppo += -surr_raw.min(surr_clip);

                    // dL/dlogp and dL/da_eff of the clipped surrogate
                    let dl_dlogp = if raw_branch { -ratio * a_eff * scale } else { 0.0 };
                    let factor = if raw_branch { ratio } else { clipped };
                    let dl_daeff = -factor * scale;

                    // actor gradients
                    let (d_mean, d_log_std) = self.actor.log_prob_grads(&means, &tr.action);
                    let grad_means: Vec<f64> = d_mean.iter().map(|g| g * dl_dlogp).collect();
                    crate::nn::mlp_backward(
                        &self.actor.params,
                        &self.actor.spec,
                        &actor_cache,
                        &grad_means,
                        &mut actor_grads,
                    )?;
                    {
                        let g = actor_grads.get_mut("log_std")?;
                        for (gv, d) in g.data.iter_mut().zip(&d_log_std) {
                            *gv += d * dl_dlogp;
                        }
                    }

                    // critic gradients
                    let (v, critic_cache) = self.critic.value(&tr.obs)?;
                    sum_value += (v - returns[i]) * (v - returns[i]);
                    let grad_v = cfg.value_coef * 2.0 * (v - returns[i]) * scale;
                    crate::nn::mlp_backward(
                        &self.critic.params,
                        &self.critic.spec,
                        &critic_cache,
                        &[grad_v],
                        &mut critic_grads,
                    )?;

                    // CBF gradients: supervised pull toward the target plus
                    // the *negated* policy-term gradient (inner minimizer of
                    // the min–max objective ascends L_PPO)
                    if !cfg.disable_cbf {
                        let mut sample_cbf = 0.0;
                        for (d, cache) in caches.iter().enumerate() {
                            let lo = d * slots_per_drone;
                            let hi = lo + slots_per_drone;
                            let mut cot = vec![0.0; slots_per_drone];
                            for s in lo..hi {
                                let residual = theta[s] - targets[s];
                                sample_cbf += residual * residual;
                                cot[s - lo] = dl_daeff * (c_adv[s] + cost_gap[s])
                                    + cfg.cbf_coef * 2.0 * residual * scale;
                            }
                            cbf_backward(&self.cbf, &self.cbf_spec, cache, &cot, &mut cbf_grads)?;
                        }
                        sum_cbf += sample_cbf;
                    }
                    loss_samples += 1;
                }

                self.actor_opt
                    .apply(&mut self.actor.params, &actor_grads)
                    .map_err(|e| Error::Numeric(format!("update {}: {e}", self.update_index)))?;
                self.actor
                    .clamp_log_std(cfg.log_std_min, cfg.log_std_max);
                self.critic_opt
                    .apply(&mut self.critic.params, &critic_grads)
                    .map_err(|e| Error::Numeric(format!("update {}: {e}", self.update_index)))?;
                if !cfg.disable_cbf {
                    self.cbf_opt
                        .apply(&mut self.cbf, &cbf_grads)
                        .map_err(|e| Error::Numeric(format!("update {}: {e}", self.update_index)))?;
                }
            }
        }

        // --- soft target updates ---
        soft_update(&mut self.actor_target, &self.actor.params, cfg.tau)?;
        soft_update(&mut self.critic_target, &self.critic.params, cfg.tau)?;
        soft_update(&mut self.cbf_target_net, &self.cbf, cfg.tau)?;

        let denom = loss_samples.max(1) as f64;
        let loss_ppo = sum_ppo / denom;
        let loss_value = sum_value / denom;
        let loss_cbf = sum_cbf / denom;
        let loss_total =
            super::losses::total_loss(loss_ppo, loss_value, loss_cbf, cfg.value_coef, cfg.cbf_coef)?;
        if !loss_total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at update {} (ppo={loss_ppo}, value={loss_value}, cbf={loss_cbf})",
                self.update_index
            )));
        }

        Ok(MetricsRecord {
            update: self.update_index,
            env_steps: self.env_steps,
            mean_ep_reward: self.episodes.mean_reward(),
            mean_ep_time: self.episodes.mean_steps().map(|s| s * self.scenario.dt),
            explained_variance: ev,
            collision_rate: self.episodes.collision_rate(),
            success_rate: self.episodes.success_rate(),
            loss_ppo,
            loss_value,
            loss_cbf,
            loss_total,
        })
    }
}

/// Fisher–Yates shuffle driven by our explicit stream (keeps the dependency
/// surface to `Rng::gen_range`).
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Train from scratch: returns the final checkpoint and the full metrics log.
pub fn train(
    config: TrainConfig,
    scenario: Scenario,
    seed: u64,
) -> Result<(Checkpoint, Vec<MetricsRecord>)> {
    let updates = config.updates;
    let mut trainer = Trainer::new(config, scenario, seed)?;
    let records = trainer.run(updates, |_| Ok(()))?;
    Ok((trainer.checkpoint(), records))
}
