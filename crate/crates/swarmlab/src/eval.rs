//! Deterministic policy evaluation and baseline comparison.
//!
//! Evaluation runs the actor's *mean* action (no sampling): per-trial
//! variation comes only from the scenario's start jitter under per-trial
//! derived seeds, so a report is bit-reproducible for a given (checkpoint,
//! scenario, seed, trials) tuple.
//!
//! Trials are classified exclusively: `collision` if any drone collided,
//! otherwise `success` if every drone passed every gate within the step cap,
//! otherwise `timeout` — the three rates always sum to 100%.

use crate::attention::cbf_forward;
use crate::error::Result;
use crate::shield::{barrier_eval, project_velocity, BarrierConstraint};
use crate::sim::scenario::{Scenario, ShieldMode};
use crate::sim::{build_observation, obstacle_features, sorted_obstacle_indices, step_world, ActionCmd};
use crate::train::{policy_observation, Checkpoint};
use crate::trajectory::{TrajMeta, TrajRecord, TrajectoryWriter};
use crate::vec3::Vec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Aggregated evaluation metrics over a set of trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trials: u64,
    /// Percent of trials where every drone finished with no collision.
    pub success_rate: f64,
    /// Percent of trials with at least one collision.
    pub collision_rate: f64,
    /// Percent of trials that hit the step cap unfinished (no collision).
    pub timeout_rate: f64,
    /// Smallest obstacle clearance (center distance minus combined radii)
    /// seen across all trials; None when the scenario has no obstacles.
    pub min_clearance: Option<f64>,
    /// Inter-drone separation averaged over steps, pairs, and trials.
    pub mean_separation: Option<f64>,
    /// Per-trial minimum separation, averaged over trials.
    pub min_separation: Option<f64>,
    /// Mean completion time (s) over successful trials.
    pub mean_mission_time: Option<f64>,
    /// Mean commanded-speed magnitude over all alive drone-steps.
    pub mean_speed: f64,
    /// Times the shield changed a commanded velocity.
    pub shield_interventions: u64,
}

/// Knobs of one evaluation run.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub trials: u64,
    pub seed: u64,
    /// Override the scenario's shield flag.
    pub shield: Option<ShieldMode>,
    /// Write one trajectory file per trial into this directory.
    pub trajectory_dir: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            trials: 20,
            seed: 0,
            shield: None,
            trajectory_dir: None,
        }
    }
}

/// Derive the world-reset seed of one trial.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    seed ^ (trial + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

struct TrialStats {
    collided: bool,
    success: bool,
    end_time: f64,
    min_clearance: Option<f64>,
    sum_separation: f64,
    separation_samples: u64,
    min_separation: Option<f64>,
    sum_speed: f64,
    speed_samples: u64,
    interventions: u64,
}

/// Evaluate a checkpoint's policy on a scenario.
pub fn run_eval(ckpt: &Checkpoint, scenario: &Scenario, opts: &EvalOptions) -> Result<EvalReport> {
    ckpt.check_scenario(scenario)?;
    scenario.validate()?;
    let shield_on = opts.shield.unwrap_or(scenario.shield).enabled();

    let mut trials = Vec::with_capacity(opts.trials as usize);
    for trial in 0..opts.trials {
        let stats = run_trial(ckpt, scenario, trial, opts.seed, shield_on, opts)?;
        trials.push(stats);
    }

    let n = opts.trials.max(1) as f64;
    let successes: Vec<&TrialStats> = trials.iter().filter(|t| t.success).collect();
    let collision_count = trials.iter().filter(|t| t.collided).count() as f64;
    let success_count = successes.len() as f64;
    let timeout_count = trials.len() as f64 - collision_count - success_count;

    let min_clearance = trials
        .iter()
        .filter_map(|t| t.min_clearance)
        .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.min(c))));
    let sep_samples: u64 = trials.iter().map(|t| t.separation_samples).sum();
    let mean_separation = if sep_samples > 0 {
        Some(trials.iter().map(|t| t.sum_separation).sum::<f64>() / sep_samples as f64)
    } else {
        None
    };
    let per_trial_min: Vec<f64> = trials.iter().filter_map(|t| t.min_separation).collect();
    let min_separation = if per_trial_min.is_empty() {
        None
    } else {
        Some(per_trial_min.iter().sum::<f64>() / per_trial_min.len() as f64)
    };
    let mean_mission_time = if successes.is_empty() {
        None
    } else {
        Some(successes.iter().map(|t| t.end_time).sum::<f64>() / successes.len() as f64)
    };
    let speed_samples: u64 = trials.iter().map(|t| t.speed_samples).sum();
    let mean_speed = if speed_samples > 0 {
        trials.iter().map(|t| t.sum_speed).sum::<f64>() / speed_samples as f64
    } else {
        0.0
    };

    Ok(EvalReport {
        trials: opts.trials,
        success_rate: 100.0 * success_count / n,
        collision_rate: 100.0 * collision_count / n,
        timeout_rate: 100.0 * timeout_count / n,
        min_clearance,
        mean_separation,
        min_separation,
        mean_mission_time,
        mean_speed,
        shield_interventions: trials.iter().map(|t| t.interventions).sum(),
    })
}

fn run_trial(
    ckpt: &Checkpoint,
    scenario: &Scenario,
    trial: u64,
    seed: u64,
    shield_on: bool,
    opts: &EvalOptions,
) -> Result<TrialStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, trial));
    let mut world = scenario.reset_world(&mut rng);
    let n = world.num_drones();

    let mut writer = match &opts.trajectory_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let file = std::fs::File::create(dir.join(format!("trial_{trial:03}.jsonl")))?;
            let meta = TrajMeta {
                scenario: scenario.clone(),
                trial,
                seed,
            };
            let mut w = TrajectoryWriter::new(std::io::BufWriter::new(file), &meta)?;
            for (d, drone) in world.drones.iter().enumerate() {
                w.record(&TrajRecord {
                    step: 0,
                    drone_id: d,
                    p: drone.position.to_array(),
                    v: [0.0; 3],
                    reward: 0.0,
                    alive: true,
                    next_gate: 0,
                })?;
            }
            Some(w)
        }
        None => None,
    };

    let mut stats = TrialStats {
        collided: false,
        success: false,
        end_time: 0.0,
        min_clearance: None,
        sum_separation: 0.0,
        separation_samples: 0,
        min_separation: None,
        sum_speed: 0.0,
        speed_samples: 0,
        interventions: 0,
    };

    loop {
        let mut obs = Vec::new();
        for i in 0..n {
            obs.extend(policy_observation(&build_observation(&world, i)?));
        }
        let (means, _) = ckpt.actor.mean(&obs)?;
        let was_alive: Vec<bool> = world.drones.iter().map(|d| d.alive).collect();

        let mut commands = Vec::with_capacity(n);
        for i in 0..n {
            let raw = Vec3::new(means[3 * i], means[3 * i + 1], means[3 * i + 2]);
            let mut v = raw.clamp_abs(world.params.v_max);
            if shield_on && world.drones[i].alive {
                let constraints = shield_constraints(ckpt, &world, i, &obs)?;
                let projection = project_velocity(v, &constraints);
                if projection.intervened {
                    stats.interventions += 1;
                }
                v = projection.velocity;
            }
            commands.push(ActionCmd {
                velocity: v,
            });
        }

        let result = step_world(&mut world, &commands)?;
        if result.collisions.iter().any(|&c| c) {
            stats.collided = true;
        }

        // clearance / separation / speed bookkeeping over post-step state
        for (i, drone) in world.drones.iter().enumerate() {
            if !drone.alive {
                continue;
            }
            for o in &world.obstacles {
                let c = drone.position.dist(o.position) - o.radius - world.params.drone_radius;
                stats.min_clearance = Some(stats.min_clearance.map_or(c, |m| m.min(c)));
            }
            if was_alive[i] {
                stats.sum_speed += result.velocities[i].norm();
                stats.speed_samples += 1;
            }
        }
        for i in 0..n {
            if !world.drones[i].alive {
                continue;
            }
            for j in (i + 1)..n {
                if !world.drones[j].alive {
                    continue;
                }
                let d = world.drones[i].position.dist(world.drones[j].position);
                stats.sum_separation += d;
                stats.separation_samples += 1;
                stats.min_separation = Some(stats.min_separation.map_or(d, |m| m.min(d)));
            }
        }

        if let Some(w) = writer.as_mut() {
            for d in 0..n {
                w.record(&TrajRecord {
                    step: world.step,
                    drone_id: d,
                    p: world.drones[d].position.to_array(),
                    v: result.velocities[d].to_array(),
                    reward: result.rewards[d],
                    alive: world.drones[d].alive,
                    next_gate: world.next_gate[d],
                })?;
            }
        }

        if result.done {
            stats.end_time = world.time();
            stats.success = !stats.collided
                && (0..n).all(|i| world.drones[i].alive && world.is_finished(i));
            break;
        }
    }
    Ok(stats)
}

/// Barrier constraints for one drone: protected spheres of radius
/// `combined radii + safe_radius` around the tracked obstacles and every
/// other alive drone, with class-K slopes taken from the CBF network's
/// constraint slots.
fn shield_constraints(
    ckpt: &Checkpoint,
    world: &crate::sim::WorldState,
    drone_id: usize,
    joint_obs: &[f64],
) -> Result<Vec<BarrierConstraint>> {
    let obs_dim = crate::sim::obs_len(world.params.obstacle_slots);
    let own = &joint_obs[drone_id * obs_dim..drone_id * obs_dim + crate::sim::OWN_STATE_DIM];
    let features = obstacle_features(world, drone_id);
    let (out, _) = cbf_forward(&ckpt.cbf, &ckpt.cbf_spec, own, &features)?;

    let drone = &world.drones[drone_id];
    let k = world.params.obstacle_slots;
    let mut constraints = Vec::new();

    for (slot, &oi) in sorted_obstacle_indices(world, drone.position)
        .iter()
        .take(k)
        .enumerate()
    {
        let o = &world.obstacles[oi];
        let radius = o.radius + world.params.drone_radius + world.params.safe_radius;
        match barrier_eval(drone.position, o.position, o.velocity, radius, out.theta[slot]) {
            Ok(c) => constraints.push(c),
            // on top of the obstacle center: already colliding, nothing to shield
            Err(_) => continue,
        }
    }

    let mut slot = k;
    for (j, other) in world.drones.iter().enumerate() {
        if j == drone_id {
            continue;
        }
        if other.alive {
            let radius = 2.0 * world.params.drone_radius + world.params.safe_radius;
            if let Ok(c) = barrier_eval(
                drone.position,
                other.position,
                other.velocity,
                radius,
                out.theta[slot],
            ) {
                constraints.push(c);
            }
        }
        slot += 1;
    }
    Ok(constraints)
}

/// Side-by-side evaluation of two checkpoints; deltas are `b - a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: EvalReport,
    pub b: EvalReport,
    pub delta_success_rate: f64,
    pub delta_collision_rate: f64,
    pub delta_timeout_rate: f64,
    pub delta_mean_speed: f64,
}

impl Comparison {
    pub fn new(a: EvalReport, b: EvalReport) -> Self {
        Self {
            delta_success_rate: b.success_rate - a.success_rate,
            delta_collision_rate: b.collision_rate - a.collision_rate,
            delta_timeout_rate: b.timeout_rate - a.timeout_rate,
            delta_mean_speed: b.mean_speed - a.mean_speed,
            a,
            b,
        }
    }
}

/// Format with 6 significant digits (the precision of all human-readable
/// numeric output).
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0.00000".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), sig6)
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "trials                  {}", self.trials)?;
        writeln!(f, "success rate (%)        {}", sig6(self.success_rate))?;
        writeln!(f, "collision rate (%)      {}", sig6(self.collision_rate))?;
        writeln!(f, "timeout rate (%)        {}", sig6(self.timeout_rate))?;
        writeln!(f, "min clearance (m)       {}", opt(self.min_clearance))?;
        writeln!(f, "mean separation (m)     {}", opt(self.mean_separation))?;
        writeln!(f, "min separation (m)      {}", opt(self.min_separation))?;
        writeln!(f, "mean mission time (s)   {}", opt(self.mean_mission_time))?;
        writeln!(f, "mean speed (m/s)        {}", sig6(self.mean_speed))?;
        write!(f, "shield interventions    {}", self.shield_interventions)
    }
}

impl std::fmt::Display for Comparison {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let row = |name: &str, a: String, b: String, d: String| {
            format!("{name:<24}{a:>14}{b:>14}{d:>14}")
        };
        writeln!(f, "{}", row("metric", "A".into(), "B".into(), "B - A".into()))?;
        writeln!(
            f,
            "{}",
            row(
                "success rate (%)",
                sig6(self.a.success_rate),
                sig6(self.b.success_rate),
                sig6(self.delta_success_rate)
            )
        )?;
        writeln!(
            f,
            "{}",
            row(
                "collision rate (%)",
                sig6(self.a.collision_rate),
                sig6(self.b.collision_rate),
                sig6(self.delta_collision_rate)
            )
        )?;
        writeln!(
            f,
            "{}",
            row(
                "timeout rate (%)",
                sig6(self.a.timeout_rate),
                sig6(self.b.timeout_rate),
                sig6(self.delta_timeout_rate)
            )
        )?;
        writeln!(
            f,
            "{}",
            row(
                "min clearance (m)",
                opt(self.a.min_clearance),
                opt(self.b.min_clearance),
                "".into()
            )
        )?;
        write!(
            f,
            "{}",
            row(
                "mean speed (m/s)",
                sig6(self.a.mean_speed),
                sig6(self.b.mean_speed),
                sig6(self.delta_mean_speed)
            )
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_formats_six_significant_digits() {
        assert_eq!(sig6(0.0), "0.00000");
        assert_eq!(sig6(1.0), "1.00000");
        assert_eq!(sig6(123.456789), "123.457");
        assert_eq!(sig6(0.00123456789), "0.00123457");
        assert_eq!(sig6(-98765.4321), "-98765.4");
        assert_eq!(sig6(1234567.0), "1.23457e6");
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let s: Vec<u64> = (0..20).map(|t| trial_seed(7, t)).collect();
        let mut dedup = s.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), s.len());
    }

    #[test]
    fn comparison_deltas() {
        let a = EvalReport {
            trials: 10,
            success_rate: 50.0,
            collision_rate: 30.0,
            timeout_rate: 20.0,
            min_clearance: Some(0.1),
            mean_separation: None,
            min_separation: None,
            mean_mission_time: Some(5.0),
            mean_speed: 1.0,
            shield_interventions: 0,
        };
        let mut b = a.clone();
        b.success_rate = 80.0;
        b.collision_rate = 10.0;
        b.timeout_rate = 10.0;
        let cmp = Comparison::new(a.clone(), b);
        assert_eq!(cmp.delta_success_rate, 30.0);
        assert_eq!(cmp.delta_collision_rate, -20.0);

        let self_cmp = Comparison::new(a.clone(), a);
        assert_eq!(self_cmp.delta_success_rate, 0.0);
        assert_eq!(self_cmp.delta_collision_rate, 0.0);
        assert_eq!(self_cmp.delta_timeout_rate, 0.0);
        assert_eq!(self_cmp.delta_mean_speed, 0.0);
    }
}
