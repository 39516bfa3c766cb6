//! Deterministic kinematic multi-drone environment.
//!
//! Drones are velocity-commanded point masses: each step integrates
//! `p += clamp(v_cmd) * dt` with a first-order hold, obstacles advance along
//! closed-form motion laws, and collisions / gate passages are evaluated after
//! motion. Orientation is carried through observations but never integrated.
//!
//! Step order inside [`step_world`]:
//!
//! 1. integrate alive drones (commands clamped per-component to `v_max`),
//! 2. advance obstacles to the new simulation time,
//! 3. detect collisions; colliding drones die in place for the rest of the
//!    episode (their velocity zeroes, other drones continue),
//! 4. compute rewards from post-motion positions against each drone's target
//!    gate *as of the start of the step* (`-100` on collision, `1/(d + 1e-3)`
//!    otherwise, `0` for drones that were already dead),
//! 5. evaluate gate passages on the motion segment and advance next-gate
//!    indices,
//! 6. build fresh observations and the done flag (everyone finished or dead,
//!    or the step cap is hit).
//!
//! Everything is pure `f64` arithmetic: identical inputs give bit-identical
//! trajectories. Randomness only enters through scenario resets (start
//! jitter), which live in [`scenario`](crate::sim::scenario).

pub mod scenario;

use crate::error::{Error, Result};
use crate::vec3::{Quat, Vec3};
use serde::{Deserialize, Serialize};

/// Reward stabilization constant: `r = 1 / (d + REWARD_EPSILON)`.
pub const REWARD_EPSILON: f64 = 0.001;

/// Relative-position fill for empty obstacle slots in observations: +100 m on
/// each axis from the drone, far outside attention relevance.
pub const SENTINEL_OFFSET: f64 = 100.0;

/// Number of scalars in a per-drone observation before the obstacle block.
pub const OWN_STATE_DIM: usize = 13;

/// Per-drone observation length for a given obstacle-slot count.
pub fn obs_len(obstacle_slots: usize) -> usize {
    OWN_STATE_DIM + 3 * obstacle_slots
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub position: Vec3,
    pub orientation: Quat,
    pub velocity: Vec3,
    pub angular_velocity: Vec3,
    pub alive: bool,
}

impl DroneState {
    pub fn at(position: Vec3) -> Self {
        Self {
            position,
            orientation: Quat::IDENTITY,
            velocity: Vec3::ZERO,
            angular_velocity: Vec3::ZERO,
            alive: true,
        }
    }
}

/// Closed-form obstacle motion laws. Positions are evaluated from the
/// simulation clock, never integrated, so circular obstacles hold their
/// radius exactly and linear ones never leave their segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MotionLaw {
    Static {
        position: Vec3,
    },
    /// Back-and-forth along the segment `a -> b` at constant speed.
    Linear { a: Vec3, b: Vec3, speed: f64 },
    /// Horizontal circle around `center`; `phase` is the start angle.
    Circular {
        center: Vec3,
        radius: f64,
        angular_rate: f64,
        phase: f64,
    },
}

impl MotionLaw {
    /// Position and velocity at absolute time `t`.
    pub fn sample(&self, t: f64) -> (Vec3, Vec3) {
        match *self {
            MotionLaw::Static { position } => (position, Vec3::ZERO),
            MotionLaw::Linear { a, b, speed } => {
                let span = b - a;
                let length = span.norm();
                if length <= 1e-12 || speed == 0.0 {
                    return (a, Vec3::ZERO);
                }
                let dir = span / length;
                let u = (speed * t).rem_euclid(2.0 * length);
                if u <= length {
                    (a + dir * u, dir * speed)
                } else {
                    (a + dir * (2.0 * length - u), -dir * speed)
                }
            }
            MotionLaw::Circular {
                center,
                radius,
                angular_rate,
                phase,
            } => {
                let ang = phase + angular_rate * t;
                let pos = center + Vec3::new(radius * ang.cos(), radius * ang.sin(), 0.0);
                let vel = Vec3::new(
                    -radius * angular_rate * ang.sin(),
                    radius * angular_rate * ang.cos(),
                    0.0,
                );
                (pos, vel)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub radius: f64,
    pub motion: MotionLaw,
}

impl ObstacleState {
    pub fn new(radius: f64, motion: MotionLaw) -> Self {
        let (position, velocity) = motion.sample(0.0);
        Self {
            position,
            velocity,
            radius,
            motion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub center: Vec3,
    /// Unit passage direction; crossings count only along `+normal`.
    pub normal: Vec3,
    pub half_width: f64,
    pub half_height: f64,
    /// Position of this gate in the course ordering.
    pub order: usize,
}

impl GateSpec {
    /// Deterministic in-plane axes `(u, w)` spanning the gate rectangle.
    /// `u` pairs with `half_width`, `w` with `half_height`.
    pub fn in_plane_basis(&self) -> (Vec3, Vec3) {
        let reference = if self.normal.z.abs() < 0.9 {
            Vec3::new(0.0, 0.0, 1.0)
        } else {
            Vec3::new(1.0, 0.0, 0.0)
        };
        let u = self
            .normal
            .cross(reference)
            .normalized()
            .expect("gate normal must not be parallel to the reference axis");
        let w = self.normal.cross(u);
        (u, w)
    }
}

/// Static world parameters shared by every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub v_max: f64,
    pub drone_radius: f64,
    /// Soft safety margin used by clearance costs, CBF targets, and the shield.
    pub safe_radius: f64,
    pub episode_cap: u64,
    /// Obstacle-slot count K in observations and constraint vectors.
    pub obstacle_slots: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            v_max: 1.5,
            drone_radius: 0.06,
            safe_radius: 0.3,
            episode_cap: 400,
            obstacle_slots: 2,
        }
    }
}

/// Full simulation snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub drones: Vec<DroneState>,
    pub obstacles: Vec<ObstacleState>,
    /// Gates sorted by `order`.
    pub gates: Vec<GateSpec>,
    /// Per-drone index of the next gate to pass; `gates.len()` means finished.
    pub next_gate: Vec<usize>,
    pub step: u64,
    pub dt: f64,
    pub params: WorldParams,
}

/// Commanded velocity for one drone; components are clamped to
/// `[-v_max, v_max]` before integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionCmd {
    pub velocity: Vec3,
}

impl ActionCmd {
    pub fn new(vx: f64, vy: f64, vz: f64) -> Self {
        Self {
            velocity: Vec3::new(vx, vy, vz),
        }
    }
}

/// Outcome of one [`step_world`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub rewards: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub done: bool,
    /// New collisions this step (drones that just died).
    pub collisions: Vec<bool>,
    pub gate_passed: Vec<bool>,
    /// Distance to the target gate used in each drone's reward.
    pub distances: Vec<f64>,
    /// Velocity each drone actually integrated this step (zero for drones
    /// that were already dead); satisfies `p_new = p_old + v * dt` exactly.
    pub velocities: Vec<Vec3>,
}

impl WorldState {
    pub fn num_drones(&self) -> usize {
        self.drones.len()
    }

    /// Simulation time in seconds.
    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn is_finished(&self, drone_id: usize) -> bool {
        self.next_gate[drone_id] >= self.gates.len()
    }

    /// Center of the drone's current target gate. Finished drones keep the
    /// last gate as reference.
    pub fn target_gate_center(&self, drone_id: usize) -> Vec3 {
        let idx = self.next_gate[drone_id].min(self.gates.len() - 1);
        self.gates[idx].center
    }

    /// All drones finished or dead, or the step cap is reached.
    pub fn episode_over(&self) -> bool {
        if self.step >= self.params.episode_cap {
            return true;
        }
        self.drones
            .iter()
            .enumerate()
            .all(|(i, d)| !d.alive || self.is_finished(i))
    }
}

/// Indices of obstacles sorted by ascending distance to `from` (ties broken
/// by index, making the ordering fully deterministic).
pub fn sorted_obstacle_indices(world: &WorldState, from: Vec3) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..world.obstacles.len()).collect();
    idx.sort_by(|&a, &b| {
        let da = world.obstacles[a].position.dist(from);
        let db = world.obstacles[b].position.dist(from);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    idx
}

/// Per-drone observation: `[p_rel(3), q(4), v(3), omega(3), obstacles(3K)]`.
///
/// `p_rel` is the drone position minus its current target gate center. The
/// obstacle block holds relative positions of the K nearest obstacles in
/// ascending distance; empty slots are filled with the sentinel offset.
pub fn build_observation(world: &WorldState, drone_id: usize) -> Result<Vec<f64>> {
    let drone = world
        .drones
        .get(drone_id)
        .ok_or_else(|| Error::argument(format!("invalid drone id {drone_id}")))?;

    let k = world.params.obstacle_slots;
    let mut obs = Vec::with_capacity(obs_len(k));
    let p_rel = drone.position - world.target_gate_center(drone_id);
    obs.extend_from_slice(&p_rel.to_array());
    obs.extend_from_slice(&drone.orientation.to_array());
    obs.extend_from_slice(&drone.velocity.to_array());
    obs.extend_from_slice(&drone.angular_velocity.to_array());

    let order = sorted_obstacle_indices(world, drone.position);
    for slot in 0..k {
        match order.get(slot) {
            Some(&oi) => {
                let rel = world.obstacles[oi].position - drone.position;
                obs.extend_from_slice(&rel.to_array());
            }
            None => obs.extend_from_slice(&[SENTINEL_OFFSET; 3]),
        }
    }
    Ok(obs)
}

/// Relative positions of the up-to-K nearest obstacles (real entries only;
/// sentinel slots are excluded so attention never dilutes over them).
pub fn obstacle_features(world: &WorldState, drone_id: usize) -> Vec<[f64; 3]> {
    let drone = &world.drones[drone_id];
    sorted_obstacle_indices(world, drone.position)
        .into_iter()
        .take(world.params.obstacle_slots)
        .map(|oi| (world.obstacles[oi].position - drone.position).to_array())
        .collect()
}

/// Clearances for every constraint slot of one drone: K obstacle slots
/// (nearest-first, same order as the observation block) followed by
/// drone-pair slots (other drones by ascending index).
///
/// Clearance is center distance minus combined radii. Empty slots — missing
/// obstacles, dead partners, or a dead subject drone — are `+inf`.
pub fn constraint_clearances(world: &WorldState, drone_id: usize) -> Vec<f64> {
    let k = world.params.obstacle_slots;
    let n = world.num_drones();
    let mut out = vec![f64::INFINITY; k + n.saturating_sub(1)];
    let drone = &world.drones[drone_id];
    if !drone.alive {
        return out;
    }

    let order = sorted_obstacle_indices(world, drone.position);
    for slot in 0..k {
        if let Some(&oi) = order.get(slot) {
            let obstacle = &world.obstacles[oi];
            out[slot] = drone.position.dist(obstacle.position)
                - obstacle.radius
                - world.params.drone_radius;
        }
    }

    let mut slot = k;
    for (j, other) in world.drones.iter().enumerate() {
        if j == drone_id {
            continue;
        }
        if other.alive {
            out[slot] =
                drone.position.dist(other.position) - 2.0 * world.params.drone_radius;
        }
        slot += 1;
    }
    out
}

/// Number of constraint slots per drone for a world of `n` drones and K
/// obstacle slots.
pub fn constraint_slots(n_drones: usize, obstacle_slots: usize) -> usize {
    obstacle_slots + n_drones.saturating_sub(1)
}

/// Reward of one drone given its target-gate distance and collision status.
pub fn reward(distance: f64, collided: bool) -> Result<f64> {
    if distance < 0.0 {
        return Err(Error::argument(format!(
            "reward: negative distance {distance}"
        )));
    }
    if collided {
        Ok(-100.0)
    } else {
        Ok(1.0 / (distance + REWARD_EPSILON))
    }
}

/// Collision flags for every drone (dead drones are out of play and never
/// flagged). Drone-obstacle: center distance < obstacle radius + drone
/// radius. Drone-drone: distance < 2 * drone radius, symmetric.
pub fn detect_collisions(world: &WorldState) -> Vec<bool> {
    let n = world.num_drones();
    let mut flags = vec![false; n];
    let r_drone = world.params.drone_radius;

    for (i, drone) in world.drones.iter().enumerate() {
        if !drone.alive {
            continue;
        }
        for obstacle in &world.obstacles {
            if drone.position.dist(obstacle.position) < obstacle.radius + r_drone {
                flags[i] = true;
                break;
            }
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
            if world.drones[i].position.dist(world.drones[j].position) < 2.0 * r_drone {
                flags[i] = true;
                flags[j] = true;
            }
        }
    }
    flags
}

/// True iff the segment `prev -> next` crosses the gate plane along the
/// normal direction and the crossing point lies inside the gate rectangle.
pub fn check_gate_passage(prev: Vec3, next: Vec3, gate: &GateSpec) -> bool {
    let s_prev = (prev - gate.center).dot(gate.normal);
    let s_next = (next - gate.center).dot(gate.normal);
    if !(s_prev < 0.0 && s_next >= 0.0) {
        return false;
    }
    let t = s_prev / (s_prev - s_next);
    let hit = prev + (next - prev) * t;
    let (u, w) = gate.in_plane_basis();
    let d = hit - gate.center;
    d.dot(u).abs() <= gate.half_width && d.dot(w).abs() <= gate.half_height
}

/// Advance the world by one step. See the module docs for the exact ordering.
pub fn step_world(world: &mut WorldState, actions: &[ActionCmd]) -> Result<StepResult> {
    let n = world.num_drones();
    if actions.len() != n {
        return Err(Error::argument(format!(
            "expected {n} actions, got {}",
            actions.len()
        )));
    }
    for (i, a) in actions.iter().enumerate() {
        if !a.velocity.is_finite() {
            return Err(Error::numeric_input(format!(
                "action for drone {i} is non-finite"
            )));
        }
    }

    let prev_positions: Vec<Vec3> = world.drones.iter().map(|d| d.position).collect();
    let prev_targets: Vec<Vec3> = (0..n).map(|i| world.target_gate_center(i)).collect();
    let was_alive: Vec<bool> = world.drones.iter().map(|d| d.alive).collect();

    let mut velocities = vec![Vec3::ZERO; n];
    for (i, (drone, action)) in world.drones.iter_mut().zip(actions).enumerate() {
        if drone.alive {
            let v = action.velocity.clamp_abs(world.params.v_max);
            drone.velocity = v;
            drone.position += v * world.dt;
            velocities[i] = v;
        } else {
            drone.velocity = Vec3::ZERO;
        }
    }

    world.step += 1;
    let t = world.time();
    for obstacle in &mut world.obstacles {
        let (pos, vel) = obstacle.motion.sample(t);
        obstacle.position = pos;
        obstacle.velocity = vel;
    }

    let collisions = detect_collisions(world);
    for (drone, &hit) in world.drones.iter_mut().zip(&collisions) {
        if hit {
            drone.alive = false;
            drone.velocity = Vec3::ZERO;
        }
    }

    let mut rewards = vec![0.0; n];
    let mut distances = vec![0.0; n];
    for i in 0..n {
        let d = world.drones[i].position.dist(prev_targets[i]);
        distances[i] = d;
        rewards[i] = if collisions[i] {
            -100.0
        } else if !was_alive[i] {
            0.0
        } else {
            reward(d, false)?
        };
    }

    let mut gate_passed = vec![false; n];
    for i in 0..n {
        if !world.drones[i].alive || world.is_finished(i) {
            continue;
        }
        let gate = &world.gates[world.next_gate[i]];
        if check_gate_passage(prev_positions[i], world.drones[i].position, gate) {
            gate_passed[i] = true;
            world.next_gate[i] += 1;
        }
    }

    let observations = (0..n)
        .map(|i| build_observation(world, i))
        .collect::<Result<Vec<_>>>()?;

    Ok(StepResult {
        rewards,
        observations,
        done: world.episode_over(),
        collisions,
        gate_passed,
        distances,
        velocities,
    })
}
