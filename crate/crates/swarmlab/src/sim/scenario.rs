//! Scenario files: the structured text configuration describing a world.
//!
//! Scenarios are TOML documents declaring drones (initial positions), gates
//! (center, normal, size, order), obstacles (radius plus a motion law), and
//! the world parameters (`dt`, episode cap, obstacle slots K, speed limit,
//! radii, start jitter, shield mode). Example:
//!
//! ```toml
//! name = "smoke"
//! dt = 0.05
//! episode_cap = 200
//! obstacle_slots = 2
//! v_max = 1.5
//! drone_radius = 0.06
//! safe_radius = 0.3
//! start_jitter = 0.15
//! shield = "off"
//!
//! [[drones]]
//! position = [-1.5, 0.0, 1.0]
//!
//! [[gates]]
//! center = [0.5, 0.0, 1.0]
//! normal = [1.0, 0.0, 0.0]
//! half_width = 0.4
//! half_height = 0.4
//! order = 0
//!
//! [[obstacles]]
//! radius = 0.1
//! motion = { type = "static", position = [-0.5, 0.45, 1.0] }
//! # motion = { type = "linear", a = [...], b = [...], speed = 0.5 }
//! # motion = { type = "circular", center = [...], radius = 0.5, angular_rate = 1.0, phase = 0.0 }
//! ```
//!
//! `load` → [`Scenario::validate`] → [`Scenario::reset_world`] is the normal
//! pipeline; validation errors carry the path of the offending field.

use super::{
    DroneState, GateSpec, MotionLaw, ObstacleState, WorldParams, WorldState,
};
use crate::error::{Error, Result};
use crate::vec3::Vec3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShieldMode {
    On,
    #[default]
    Off,
}

impl ShieldMode {
    pub fn enabled(self) -> bool {
        self == ShieldMode::On
    }
}

impl std::str::FromStr for ShieldMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(ShieldMode::On),
            "off" => Ok(ShieldMode::Off),
            other => Err(Error::argument(format!(
                "shield must be `on` or `off`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneSpec {
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub center: Vec3,
    pub normal: Vec3,
    pub half_width: f64,
    pub half_height: f64,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleConfig {
    pub radius: f64,
    pub motion: MotionLaw,
}

fn default_start_jitter() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub dt: f64,
    pub episode_cap: u64,
    /// Obstacle-slot count K in observations and constraint vectors.
    pub obstacle_slots: usize,
    pub v_max: f64,
    pub drone_radius: f64,
    pub safe_radius: f64,
    /// Half-width of the uniform cube jitter applied to drone start positions
    /// on reset. Zero disables jitter.
    #[serde(default = "default_start_jitter")]
    pub start_jitter: f64,
    #[serde(default)]
    pub shield: ShieldMode,
    pub drones: Vec<DroneSpec>,
    pub gates: Vec<GateConfig>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleConfig>,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Scenario::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Scenario> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| Error::Validation {
            field: "<scenario>".to_string(),
            message: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Validation {
            field: "<scenario>".to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn num_drones(&self) -> usize {
        self.drones.len()
    }

    /// Check every structural invariant; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::validation("dt", format!("must be > 0, got {}", self.dt)));
        }
        if self.episode_cap == 0 {
            return Err(Error::validation("episode_cap", "must be >= 1"));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::validation("v_max", format!("must be > 0, got {}", self.v_max)));
        }
        if !(self.drone_radius > 0.0) {
            return Err(Error::validation(
                "drone_radius",
                format!("must be > 0, got {}", self.drone_radius),
            ));
        }
        if !(self.safe_radius > 0.0) {
            return Err(Error::validation(
                "safe_radius",
                format!("must be > 0, got {}", self.safe_radius),
            ));
        }
        if self.start_jitter < 0.0 {
            return Err(Error::validation(
                "start_jitter",
                format!("must be >= 0, got {}", self.start_jitter),
            ));
        }
        if self.drones.is_empty() {
            return Err(Error::validation("drones", "at least one drone required"));
        }
        if self.gates.is_empty() {
            return Err(Error::validation("gates", "at least one gate required"));
        }
        for (i, d) in self.drones.iter().enumerate() {
            if !d.position.is_finite() {
                return Err(Error::validation(
                    format!("drones[{i}].position"),
                    "must be finite",
                ));
            }
        }
        for (i, g) in self.gates.iter().enumerate() {
            if !(g.half_width > 0.0) {
                return Err(Error::validation(
                    format!("gates[{i}].half_width"),
                    format!("must be > 0, got {}", g.half_width),
                ));
            }
            if !(g.half_height > 0.0) {
                return Err(Error::validation(
                    format!("gates[{i}].half_height"),
                    format!("must be > 0, got {}", g.half_height),
                ));
            }
            let norm = g.normal.norm();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::validation(
                    format!("gates[{i}].normal"),
                    format!("must be unit length (|n| = {norm:.6})"),
                ));
            }
        }
        let mut orders: Vec<usize> = self.gates.iter().map(|g| g.order).collect();
        orders.sort_unstable();
        if orders != (0..self.gates.len()).collect::<Vec<_>>() {
            return Err(Error::validation(
                "gates",
                format!(
                    "order indices must be a permutation of 0..{}, got {orders:?}",
                    self.gates.len()
                ),
            ));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.radius > 0.0) {
                return Err(Error::validation(
                    format!("obstacles[{i}].radius"),
                    format!("must be > 0, got {}", o.radius),
                ));
            }
            match &o.motion {
                MotionLaw::Static { position } => {
                    if !position.is_finite() {
                        return Err(Error::validation(
                            format!("obstacles[{i}].motion.position"),
                            "must be finite",
                        ));
                    }
                }
                MotionLaw::Linear { a, b, speed } => {
                    if !a.is_finite() || !b.is_finite() {
                        return Err(Error::validation(
                            format!("obstacles[{i}].motion"),
                            "endpoints must be finite",
                        ));
                    }
                    if *speed < 0.0 {
                        return Err(Error::validation(
                            format!("obstacles[{i}].motion.speed"),
                            format!("must be >= 0, got {speed}"),
                        ));
                    }
                }
                MotionLaw::Circular {
                    radius,
                    angular_rate,
                    ..
                } => {
                    if !(*radius > 0.0) {
                        return Err(Error::validation(
                            format!("obstacles[{i}].motion.radius"),
                            format!("must be > 0, got {radius}"),
                        ));
                    }
                    if !angular_rate.is_finite() {
                        return Err(Error::validation(
                            format!("obstacles[{i}].motion.angular_rate"),
                            "must be finite",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn world_params(&self) -> WorldParams {
        WorldParams {
            v_max: self.v_max,
            drone_radius: self.drone_radius,
            safe_radius: self.safe_radius,
            episode_cap: self.episode_cap,
            obstacle_slots: self.obstacle_slots,
        }
    }

    /// World at t = 0 with drones exactly at their declared starts.
    pub fn to_world(&self) -> WorldState {
        let mut gates: Vec<GateSpec> = self
            .gates
            .iter()
            .map(|g| GateSpec {
                center: g.center,
                // renormalize so downstream math sees an exactly-unit normal
                normal: g.normal.normalized().expect("validated"),
                half_width: g.half_width,
                half_height: g.half_height,
                order: g.order,
            })
            .collect();
        gates.sort_by_key(|g| g.order);
        WorldState {
            drones: self.drones.iter().map(|d| DroneState::at(d.position)).collect(),
            obstacles: self
                .obstacles
                .iter()
                .map(|o| ObstacleState::new(o.radius, o.motion.clone()))
                .collect(),
            gates,
            next_gate: vec![0; self.drones.len()],
            step: 0,
            dt: self.dt,
            params: self.world_params(),
        }
    }

    /// Fresh episode world with start-position jitter drawn from `rng`.
    pub fn reset_world(&self, rng: &mut impl Rng) -> WorldState {
        let mut world = self.to_world();
        if self.start_jitter > 0.0 {
            let j = self.start_jitter;
            for drone in &mut world.drones {
                let offset = Vec3::new(
                    rng.gen_range(-j..j),
                    rng.gen_range(-j..j),
                    rng.gen_range(-j..j),
                );
                drone.position += offset;
            }
        }
        world
    }
}

/// Built-in scenario by name: `smoke`, `case1`, `case2`, or `real-mimic`.
pub fn builtin(name: &str) -> Option<Scenario> {
    match name {
        "smoke" => Some(smoke()),
        "case1" => Some(case1()),
        "case2" => Some(case2()),
        "real-mimic" => Some(real_mimic()),
        _ => None,
    }
}

pub const BUILTIN_NAMES: &[&str] = &["smoke", "case1", "case2", "real-mimic"];

/// Every built-in scenario, for suite-level tests and docs.
pub fn suite() -> Vec<Scenario> {
    BUILTIN_NAMES.iter().map(|n| builtin(n).unwrap()).collect()
}

fn base(name: &str) -> Scenario {
    Scenario {
        name: name.to_string(),
        dt: 0.05,
        episode_cap: 400,
        obstacle_slots: 2,
        v_max: 1.5,
        drone_radius: 0.06,
        safe_radius: 0.3,
        start_jitter: 0.15,
        shield: ShieldMode::Off,
        drones: vec![],
        gates: vec![],
        obstacles: vec![],
    }
}

fn gate(center: [f64; 3], normal: [f64; 3], half: f64, order: usize) -> GateConfig {
    GateConfig {
        center: center.into(),
        normal: normal.into(),
        half_width: half,
        half_height: half,
        order,
    }
}

fn static_obs(position: [f64; 3], radius: f64) -> ObstacleConfig {
    ObstacleConfig {
        radius,
        motion: MotionLaw::Static {
            position: position.into(),
        },
    }
}

/// Tiny training scenario: one drone, one static obstacle beside the path,
/// one gate.
fn smoke() -> Scenario {
    let mut s = base("smoke");
    s.episode_cap = 200;
    s.drones = vec![DroneSpec {
        position: Vec3::new(-1.5, 0.0, 1.0),
    }];
    s.gates = vec![gate([0.6, 0.0, 1.0], [1.0, 0.0, 0.0], 0.4, 0)];
    s.obstacles = vec![static_obs([-0.45, 0.4, 1.0], 0.1)];
    s
}

/// Straight flight of four drones through a cluttered field of eight static
/// obstacles toward a wide finish plane.
fn case1() -> Scenario {
    let mut s = base("case1");
    s.obstacle_slots = 4;
    s.drones = (0..4)
        .map(|i| DroneSpec {
            position: Vec3::new(-2.0, -0.75 + 0.5 * i as f64, 1.0),
        })
        .collect();
    s.gates = vec![GateConfig {
        center: Vec3::new(2.0, 0.0, 1.0),
        normal: Vec3::new(1.0, 0.0, 0.0),
        half_width: 1.6,
        half_height: 0.8,
        order: 0,
    }];
    s.obstacles = vec![
        static_obs([-1.0, -0.9, 1.0], 0.1),
        static_obs([-1.0, 0.1, 1.1], 0.1),
        static_obs([-0.5, 0.7, 0.9], 0.1),
        static_obs([0.0, -0.5, 1.0], 0.1),
        static_obs([0.0, 0.4, 1.0], 0.1),
        static_obs([0.5, -0.1, 1.1], 0.1),
        static_obs([1.0, 0.6, 1.0], 0.1),
        static_obs([1.0, -0.7, 0.9], 0.1),
    ];
    s
}

/// Closed circuit with four gates and eight obstacles (six static, one
/// back-and-forth, one circular).
fn case2() -> Scenario {
    let mut s = base("case2");
    s.obstacle_slots = 3;
    s.episode_cap = 600;
    s.drones = (0..4)
        .map(|i| DroneSpec {
            position: Vec3::new(1.4 + 0.2 * (i % 2) as f64, -1.4 - 0.2 * (i / 2) as f64, 1.0),
        })
        .collect();
    s.gates = vec![
        gate([1.5, 0.0, 1.0], [0.0, 1.0, 0.0], 0.5, 0),
        gate([0.0, 1.5, 1.0], [-1.0, 0.0, 0.0], 0.5, 1),
        gate([-1.5, 0.0, 1.0], [0.0, -1.0, 0.0], 0.5, 2),
        gate([0.0, -1.5, 1.0], [1.0, 0.0, 0.0], 0.5, 3),
    ];
    s.obstacles = vec![
        static_obs([1.5, 0.9, 1.0], 0.1),
        static_obs([0.9, 1.5, 1.0], 0.1),
        static_obs([-0.9, 1.5, 1.0], 0.1),
        static_obs([-1.5, 0.9, 1.0], 0.1),
        static_obs([-1.5, -0.9, 1.0], 0.1),
        static_obs([0.9, -1.5, 1.0], 0.1),
        ObstacleConfig {
            radius: 0.1,
            motion: MotionLaw::Linear {
                a: Vec3::new(-0.6, -1.5, 1.0),
                b: Vec3::new(-1.5, -0.6, 1.0),
                speed: 0.4,
            },
        },
        ObstacleConfig {
            radius: 0.1,
            motion: MotionLaw::Circular {
                center: Vec3::new(0.0, 0.0, 1.0),
                radius: 0.5,
                angular_rate: 0.8,
                phase: 0.0,
            },
        },
    ];
    s
}

/// Two drones, two gates, three obstacles — the desk-scale mirror of the
/// physical two-drone course.
fn real_mimic() -> Scenario {
    let mut s = base("real-mimic");
    s.obstacle_slots = 3;
    s.episode_cap = 300;
    s.start_jitter = 0.1;
    s.drones = vec![
        DroneSpec {
            position: Vec3::new(-1.6, 0.35, 1.0),
        },
        DroneSpec {
            position: Vec3::new(-1.6, -0.35, 1.0),
        },
    ];
    s.gates = vec![
        gate([-0.2, 0.0, 1.0], [1.0, 0.0, 0.0], 0.5, 0),
        gate([1.4, 0.0, 1.0], [1.0, 0.0, 0.0], 0.5, 1),
    ];
    s.obstacles = vec![
        static_obs([-0.9, 0.0, 1.0], 0.12),
        static_obs([0.6, 0.35, 1.0], 0.12),
        static_obs([0.6, -0.35, 1.0], 0.12),
    ];
    s
}
