//! On-policy experience collection.

use super::policy::{Critic, GaussianActor};
use crate::attention::{cbf_forward, CbfSpec};
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::sim::scenario::Scenario;
use crate::sim::{
    build_observation, constraint_clearances, constraint_slots, obstacle_features, step_world,
    ActionCmd, StepResult, WorldState, OWN_STATE_DIM,
};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Clip bound applied to observation obstacle offsets at the network
/// boundary. Empty slots carry a +100 m sentinel in the raw observation;
/// feeding that into a Glorot-scaled first layer saturates it, so network
/// inputs see offsets clamped to this visibility radius instead.
pub const OBSTACLE_OFFSET_CLIP: f64 = 5.0;

/// Network-input copy of one drone's observation: the own-state block is
/// untouched, obstacle offsets are clamped to the visibility radius.
pub fn policy_observation(obs: &[f64]) -> Vec<f64> {
    let mut out = obs.to_vec();
    for v in out.iter_mut().skip(OWN_STATE_DIM) {
        *v = v.clamp(-OBSTACLE_OFFSET_CLIP, OBSTACLE_OFFSET_CLIP);
    }
    out
}

/// Per-drone attention inputs and constraint data captured at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct DroneCtx {
    /// Own 13-scalar state block (first part of the drone's observation).
    pub own: Vec<f64>,
    /// Relative positions of the tracked (non-sentinel) obstacles.
    pub features: Vec<[f64; 3]>,
    /// Per-constraint clearances (`+inf` for empty slots).
    pub clearances: Vec<f64>,
    /// CBF parameters computed by the behavior network at collection time.
    pub theta: Vec<f64>,
}

/// One step of joint experience.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// Sampled (pre-clamp) joint action.
    pub action: Vec<f64>,
    pub log_prob: f64,
    /// Joint reward: sum of per-drone rewards.
    pub reward: f64,
    /// Per-constraint cost signals, drone-major (`n_drones * slots`).
    pub costs: Vec<f64>,
    pub value: f64,
    pub done: bool,
    pub next_obs: Vec<f64>,
    pub drones: Vec<DroneCtx>,
}

/// Rollout storage: one ordered transition sequence per environment plus the
/// bootstrap value after each sequence. Rebuilt from scratch every update.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub per_env: Vec<Vec<Transition>>,
    pub bootstrap: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.per_env.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Outcome of one completed episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    /// Sum of joint rewards over the episode.
    pub reward: f64,
    pub steps: u64,
    pub collided: bool,
    /// All drones finished all gates and none died.
    pub success: bool,
}

/// Rolling window over the most recent completed episodes, used for the
/// per-update training metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EpisodeWindow {
    window: VecDeque<EpisodeOutcome>,
}

impl EpisodeWindow {
    const CAPACITY: usize = 50;

    pub fn push(&mut self, outcome: EpisodeOutcome) {
        if self.window.len() == Self::CAPACITY {
            self.window.pop_front();
        }
        self.window.push_back(outcome);
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn mean_reward(&self) -> Option<f64> {
        self.mean(|o| o.reward)
    }

    pub fn mean_steps(&self) -> Option<f64> {
        self.mean(|o| o.steps as f64)
    }

    pub fn collision_rate(&self) -> Option<f64> {
        self.mean(|o| if o.collided { 1.0 } else { 0.0 })
    }

    pub fn success_rate(&self) -> Option<f64> {
        self.mean(|o| if o.success { 1.0 } else { 0.0 })
    }

    fn mean(&self, f: impl Fn(&EpisodeOutcome) -> f64) -> Option<f64> {
        if self.window.is_empty() {
            None
        } else {
            Some(self.window.iter().map(f).sum::<f64>() / self.window.len() as f64)
        }
    }
}

/// One environment with its private reset stream and episode accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvRunner {
    pub scenario: Scenario,
    pub world: WorldState,
    pub rng: ChaCha8Rng,
    pub episode_reward: f64,
    pub episode_collided: bool,
}

impl EnvRunner {
    pub fn new(scenario: Scenario, mut rng: ChaCha8Rng) -> Self {
        let world = scenario.reset_world(&mut rng);
        Self {
            scenario,
            world,
            rng,
            episode_reward: 0.0,
            episode_collided: false,
        }
    }

    pub fn reset(&mut self) {
        self.world = self.scenario.reset_world(&mut self.rng);
        self.episode_reward = 0.0;
        self.episode_collided = false;
    }

    /// Concatenated observation of all drones.
    pub fn joint_obs(&self) -> Result<Vec<f64>> {
        let mut obs = Vec::new();
        for i in 0..self.world.num_drones() {
            obs.extend(build_observation(&self.world, i)?);
        }
        Ok(obs)
    }

    /// Concatenated network-input observation (obstacle offsets clipped).
    pub fn joint_policy_obs(&self) -> Result<Vec<f64>> {
        let mut obs = Vec::new();
        for i in 0..self.world.num_drones() {
            obs.extend(policy_observation(&build_observation(&self.world, i)?));
        }
        Ok(obs)
    }

    /// Step, accumulate episode stats, and hand back the result together
    /// with the completed episode outcome (if the episode just ended).
    pub fn step(&mut self, actions: &[ActionCmd]) -> Result<(StepResult, Option<EpisodeOutcome>)> {
        let result = step_world(&mut self.world, actions)?;
        self.episode_reward += result.rewards.iter().sum::<f64>();
        if result.collisions.iter().any(|&c| c) {
            self.episode_collided = true;
        }
        let outcome = if result.done {
            let success = !self.episode_collided
                && (0..self.world.num_drones())
                    .all(|i| self.world.drones[i].alive && self.world.is_finished(i));
            let outcome = EpisodeOutcome {
                reward: self.episode_reward,
                steps: self.world.step,
                collided: self.episode_collided,
                success,
            };
            self.reset();
            Some(outcome)
        } else {
            None
        };
        Ok((result, outcome))
    }
}

/// Per-drone CBF evaluation against the current world: returns the attention
/// inputs, clearances, and theta for every drone, drone-major.
pub fn drone_contexts(
    world: &WorldState,
    observations: &[Vec<f64>],
    cbf_params: &ParamSet,
    cbf_spec: &CbfSpec,
) -> Result<Vec<DroneCtx>> {
    let mut out = Vec::with_capacity(world.num_drones());
    for i in 0..world.num_drones() {
        let own = observations[i][..OWN_STATE_DIM].to_vec();
        let features = obstacle_features(world, i);
        let clearances = constraint_clearances(world, i);
        let (cbf_out, _) = cbf_forward(cbf_params, cbf_spec, &own, &features)?;
        out.push(DroneCtx {
            own,
            features,
            clearances,
            theta: cbf_out.theta,
        });
    }
    Ok(out)
}

/// Collect `horizon` steps from every environment.
///
/// For each step: sample the joint action from the actor, evaluate the CBF
/// network per drone, record the transition (including per-constraint cost
/// signals `max(0, r_safe - clearance)`), and advance the environment.
/// Completed episodes are pushed into `episodes` and the environment resets
/// in place.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollout(
    envs: &mut [EnvRunner],
    actor: &GaussianActor,
    critic: &Critic,
    cbf_params: &ParamSet,
    cbf_spec: &CbfSpec,
    horizon: usize,
    sample_rng: &mut ChaCha8Rng,
    episodes: &mut EpisodeWindow,
) -> Result<RolloutBuffer> {
    let mut buffer = RolloutBuffer {
        per_env: Vec::with_capacity(envs.len()),
        bootstrap: Vec::with_capacity(envs.len()),
    };

    for (env_idx, env) in envs.iter_mut().enumerate() {
        let n = env.world.num_drones();
        let slots = constraint_slots(n, env.world.params.obstacle_slots);
        let r_safe = env.world.params.safe_radius;
        let mut transitions = Vec::with_capacity(horizon);

        for step_idx in 0..horizon {
            let per_drone_obs: Vec<Vec<f64>> = (0..n)
                .map(|i| build_observation(&env.world, i))
                .collect::<Result<_>>()?;
            let obs: Vec<f64> = per_drone_obs
                .iter()
                .flat_map(|o| policy_observation(o))
                .collect();

            let (means, _) = actor.mean(&obs)?;
            let (action, log_prob) = actor.sample(&means, sample_rng);
            let (value, _) = critic.value(&obs)?;
            let drones = drone_contexts(&env.world, &per_drone_obs, cbf_params, cbf_spec)?;

            let mut costs = Vec::with_capacity(n * slots);
            for ctx in &drones {
                for &clearance in &ctx.clearances {
                    costs.push((r_safe - clearance).max(0.0));
                }
            }

            let commands: Vec<ActionCmd> = action
                .chunks(3)
                .map(|c| ActionCmd::new(c[0], c[1], c[2]))
                .collect();
            let (result, outcome) = env.step(&commands).map_err(|e| {
                Error::Numeric(format!(
                    "env {env_idx} failed at rollout step {step_idx}: {e}"
                ))
            })?;
            if let Some(outcome) = outcome {
                episodes.push(outcome);
            }

            let next_obs = env.joint_policy_obs()?;
            transitions.push(Transition {
                obs,
                action,
                log_prob,
                reward: result.rewards.iter().sum(),
                costs,
                value,
                done: result.done,
                next_obs,
                drones,
            });
        }

        let bootstrap = match transitions.last() {
            Some(t) if t.done => 0.0,
            Some(t) => critic.value(&t.next_obs)?.0,
            None => 0.0,
        };
        buffer.per_env.push(transitions);
        buffer.bootstrap.push(bootstrap);
    }
    Ok(buffer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::init_cbf;
    use crate::sim::scenario::builtin;
    use rand::SeedableRng;

    fn setup() -> (Scenario, GaussianActor, Critic, ParamSet, CbfSpec) {
        let scenario = builtin("smoke").unwrap();
        let n = scenario.num_drones();
        let obs_dim = n * crate::sim::obs_len(scenario.obstacle_slots);
        let slots = constraint_slots(n, scenario.obstacle_slots);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let actor = GaussianActor::init(obs_dim, &[16], 3 * n, -0.5, &mut rng).unwrap();
        let critic = Critic::init(obs_dim, &[16], &mut rng).unwrap();
        let spec = CbfSpec::new(8, 4, vec![12], slots);
        let params = init_cbf(&spec, &mut rng).unwrap();
        (scenario, actor, critic, params, spec)
    }

    #[test]
    fn zero_horizon_gives_empty_buffer() {
        let (scenario, actor, critic, params, spec) = setup();
        let mut envs = vec![EnvRunner::new(scenario, ChaCha8Rng::seed_from_u64(1))];
        let mut window = EpisodeWindow::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let buffer = collect_rollout(
            &mut envs, &actor, &critic, &params, &spec, 0, &mut rng, &mut window,
        )
        .unwrap();
        assert!(buffer.is_empty());
        assert_eq!(buffer.bootstrap, vec![0.0]);
    }

    #[test]
    fn buffer_length_is_horizon_times_envs() {
        let (scenario, actor, critic, params, spec) = setup();
        let mut envs: Vec<EnvRunner> = (0..3)
            .map(|i| EnvRunner::new(scenario.clone(), ChaCha8Rng::seed_from_u64(10 + i)))
            .collect();
        let mut window = EpisodeWindow::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let buffer = collect_rollout(
            &mut envs, &actor, &critic, &params, &spec, 40, &mut rng, &mut window,
        )
        .unwrap();
        assert_eq!(buffer.len(), 120);
        for env in &buffer.per_env {
            assert_eq!(env.len(), 40);
        }
    }

    #[test]
    fn rollouts_are_deterministic_given_seeds() {
        let run = || {
            let (scenario, actor, critic, params, spec) = setup();
            let mut envs = vec![EnvRunner::new(scenario, ChaCha8Rng::seed_from_u64(5))];
            let mut window = EpisodeWindow::default();
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            collect_rollout(
                &mut envs, &actor, &critic, &params, &spec, 64, &mut rng, &mut window,
            )
            .unwrap()
        };
        let b1 = run();
        let b2 = run();
        assert_eq!(b1.per_env, b2.per_env);
        assert_eq!(b1.bootstrap, b2.bootstrap);
    }

    #[test]
    fn episode_bookkeeping_matches_step_trace() {
        // Count dones in the buffer and compare with an independent trace of
        // episode lengths: every done begins a fresh episode.
        let (scenario, actor, critic, params, spec) = setup();
        let cap = scenario.episode_cap;
        let mut envs = vec![EnvRunner::new(scenario, ChaCha8Rng::seed_from_u64(7))];
        let mut window = EpisodeWindow::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let horizon = 3 * cap as usize;
        let buffer = collect_rollout(
            &mut envs, &actor, &critic, &params, &spec, horizon, &mut rng, &mut window,
        )
        .unwrap();

        let stream = &buffer.per_env[0];
        let mut lengths = Vec::new();
        let mut len = 0u64;
        for t in stream {
            len += 1;
            if t.done {
                lengths.push(len);
                len = 0;
            }
        }
        assert!(!lengths.is_empty(), "cap {cap} should force episode ends");
        for l in &lengths {
            assert!(*l <= cap);
        }
        // the rolling window saw exactly the completed episodes
        assert!(!window.is_empty());
    }

    #[test]
    fn costs_are_non_negative_and_sized() {
        let (scenario, actor, critic, params, spec) = setup();
        let slots = constraint_slots(scenario.num_drones(), scenario.obstacle_slots);
        let n = scenario.num_drones();
        let mut envs = vec![EnvRunner::new(scenario, ChaCha8Rng::seed_from_u64(9))];
        let mut window = EpisodeWindow::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let buffer = collect_rollout(
            &mut envs, &actor, &critic, &params, &spec, 32, &mut rng, &mut window,
        )
        .unwrap();
        for t in &buffer.per_env[0] {
            assert_eq!(t.costs.len(), n * slots);
            assert!(t.costs.iter().all(|&c| c >= 0.0 && c.is_finite()));
            for ctx in &t.drones {
                assert_eq!(ctx.theta.len(), slots);
                assert!(ctx.theta.iter().all(|&th| th >= 0.0));
            }
        }
    }

    #[test]
    fn episode_window_rates() {
        let mut w = EpisodeWindow::default();
        assert!(w.mean_reward().is_none());
        w.push(EpisodeOutcome {
            reward: 10.0,
            steps: 20,
            collided: false,
            success: true,
        });
        w.push(EpisodeOutcome {
            reward: 20.0,
            steps: 40,
            collided: true,
            success: false,
        });
        assert_eq!(w.mean_reward(), Some(15.0));
        assert_eq!(w.mean_steps(), Some(30.0));
        assert_eq!(w.collision_rate(), Some(0.5));
        assert_eq!(w.success_rate(), Some(0.5));
    }
}
