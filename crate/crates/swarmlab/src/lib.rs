//! Safe multi-drone reinforcement learning lab.
//!
//! The crate bundles everything needed to train and evaluate velocity-controlled
//! drone swarms that fly gate courses while avoiding static and moving obstacles:
//!
//! - [`sim`] — a deterministic kinematic multi-drone environment (observations,
//!   velocity integration, obstacle motion, collision and gate-passage detection,
//!   inverse-distance rewards).
//! - [`nn`] — a minimal dense-network kernel in `f64`: MLP forward/backward with
//!   GeLU, Glorot init, an adaptive-moment optimizer, and soft target updates.
//! - [`attention`] — scaled dot-product attention over obstacle features feeding
//!   a feed-forward head that emits non-negative per-constraint CBF parameters.
//! - [`train`] — centralized MAPPO: rollout collection, GAE, clipped surrogate
//!   loss, value loss, and the min–max CBF penalty coupling.
//! - [`shield`] — an optional evaluation-time safety filter that projects
//!   commanded velocities onto barrier-constraint halfspaces.
//! - [`eval`] / [`trajectory`] / [`cli`] — benchmark harness: scenario files,
//!   trial aggregation, trajectory export and replay validation.
//!
//! Every stochastic code path draws from explicitly seeded streams; identical
//! seeds yield bit-identical trajectories, metrics logs, and checkpoints.
//!
//! See the `examples/` directory for one runnable program per capability, and
//! the `swarmlab` binary for the `train` / `eval` / `compare` / `replay` /
//! `scenario` subcommands.

pub mod attention;
pub mod cli;
pub mod error;
pub mod eval;
pub mod nn;
pub mod shield;
pub mod sim;
pub mod train;
pub mod trajectory;
pub mod vec3;

pub use error::{Error, Result};
pub use vec3::{Quat, Vec3};
