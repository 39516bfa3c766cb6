//! Trajectory files: line-delimited JSON, one record per (step, drone).
//!
//! The first line is a metadata record embedding the full scenario, so a
//! trajectory file is self-contained: replay validation recomputes kinematics
//! and rewards from the file alone. Step 0 records carry the initial state
//! (zero velocity, zero reward); each subsequent step's record holds the
//! post-step position, the velocity actually integrated that step, and the
//! reward earned.

use crate::error::{Error, Result};
use crate::sim::scenario::Scenario;
use crate::sim::REWARD_EPSILON;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajLine {
    Meta(TrajMeta),
    Step(TrajRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajMeta {
    pub scenario: Scenario,
    pub trial: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajRecord {
    pub step: u64,
    pub drone_id: usize,
    pub p: [f64; 3],
    pub v: [f64; 3],
    pub reward: f64,
    pub alive: bool,
    pub next_gate: usize,
}

/// Streaming writer for one trial's trajectory.
pub struct TrajectoryWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(mut out: W, meta: &TrajMeta) -> Result<Self> {
        let line = serde_json::to_string(&TrajLine::Meta(meta.clone()))?;
        writeln!(out, "{line}")?;
        Ok(Self { out })
    }

    pub fn record(&mut self, record: &TrajRecord) -> Result<()> {
        let line = serde_json::to_string(&TrajLine::Step(record.clone()))?;
        writeln!(self.out, "{line}")?;
        Ok(())
    }

    pub fn finish(self) -> W {
        self.out
    }
}

/// Parsed trajectory: metadata plus records grouped by step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub meta: TrajMeta,
    /// `steps[t][d]` = record of drone `d` after step `t` (step 0 = initial).
    pub steps: Vec<Vec<TrajRecord>>,
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_trajectory(std::io::BufReader::new(file))
}

pub fn parse_trajectory(reader: impl BufRead) -> Result<Trajectory> {
    let mut meta: Option<TrajMeta> = None;
    let mut records: Vec<TrajRecord> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrajLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        match parsed {
            TrajLine::Meta(m) => {
                if meta.is_some() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "duplicate metadata record".into(),
                    });
                }
                meta = Some(m);
            }
            TrajLine::Step(r) => records.push(r),
        }
    }
    let meta = meta.ok_or(Error::Parse {
        line: 1,
        message: "missing metadata record".into(),
    })?;
    let n = meta.scenario.num_drones();

    let max_step = records.iter().map(|r| r.step).max().unwrap_or(0);
    let mut table: Vec<Vec<Option<TrajRecord>>> = vec![vec![None; n]; (max_step + 1) as usize];
    for r in records {
        if r.drone_id >= n {
            return Err(Error::Parse {
                line: 0,
                message: format!("drone id {} out of range (n = {n})", r.drone_id),
            });
        }
        let (step, drone) = (r.step as usize, r.drone_id);
        table[step][drone] = Some(r);
    }
    let steps: Vec<Vec<TrajRecord>> = table
        .into_iter()
        .enumerate()
        .map(|(t, row)| {
            row.into_iter()
                .enumerate()
                .map(|(d, r)| {
                    r.ok_or(Error::Parse {
                        line: 0,
                        message: format!("missing record for step {t}, drone {d}"),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory { meta, steps })
}

/// One validation failure at a specific (step, drone).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayFlag {
    pub step: u64,
    pub drone_id: usize,
    pub kind: String,
    pub detail: String,
}

/// Outcome of replaying a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub steps: u64,
    pub drones: usize,
    pub kinematic_flags: Vec<ReplayFlag>,
    pub reward_flags: Vec<ReplayFlag>,
    pub max_kinematic_error: f64,
    pub max_reward_error: f64,
}

impl ReplayReport {
    pub fn clean(&self) -> bool {
        self.kinematic_flags.is_empty() && self.reward_flags.is_empty()
    }
}

const KINEMATIC_TOL: f64 = 1e-9;
const REWARD_TOL: f64 = 1e-9;

/// Re-validate a trajectory: kinematic consistency `|dp - v*dt| <= 1e-9` per
/// step, plus rewards recomputed from positions and alive transitions.
pub fn replay_validate(traj: &Trajectory) -> ReplayReport {
    let scenario = &traj.meta.scenario;
    let dt = scenario.dt;
    let world0 = scenario.to_world();
    let gates = &world0.gates;
    let n = scenario.num_drones();

    let mut kinematic_flags = Vec::new();
    let mut reward_flags = Vec::new();
    let mut max_kin = 0.0f64;
    let mut max_rew = 0.0f64;

    for t in 1..traj.steps.len() {
        let prev = &traj.steps[t - 1];
        let curr = &traj.steps[t];
        for d in 0..n {
            let p_prev = crate::vec3::Vec3::from(prev[d].p);
            let p_curr = crate::vec3::Vec3::from(curr[d].p);
            let v = crate::vec3::Vec3::from(curr[d].v);
            let err = (p_curr - p_prev - v * dt).norm();
            max_kin = max_kin.max(err);
            if err > KINEMATIC_TOL {
                kinematic_flags.push(ReplayFlag {
                    step: curr[d].step,
                    drone_id: d,
                    kind: "kinematic".into(),
                    detail: format!("|dp - v*dt| = {err:.3e}"),
                });
            }

            // The reward of step t uses the target gate in effect at the
            // start of the step (= next_gate recorded at t-1, clamped to the
            // last gate once finished); collisions show up as alive -> dead
            // transitions.
            let expected = if prev[d].alive && !curr[d].alive {
                -100.0
            } else if !prev[d].alive {
                0.0
            } else {
                let gate_idx = prev[d].next_gate.min(gates.len() - 1);
                let dist = p_curr.dist(gates[gate_idx].center);
                1.0 / (dist + REWARD_EPSILON)
            };
            let err = (expected - curr[d].reward).abs();
            max_rew = max_rew.max(err);
            if err > REWARD_TOL {
                reward_flags.push(ReplayFlag {
                    step: curr[d].step,
                    drone_id: d,
                    kind: "reward".into(),
                    detail: format!("logged {} vs recomputed {expected}", curr[d].reward),
                });
            }
        }
    }

    ReplayReport {
        steps: traj.steps.len().saturating_sub(1) as u64,
        drones: n,
        kinematic_flags,
        reward_flags,
        max_kinematic_error: max_kin,
        max_reward_error: max_rew,
    }
}
