//! Implementations behind the `swarmlab` binary's subcommands.
//!
//! Each command is an ordinary library function returning `Result<()>` (or a
//! report); the binary maps error variants to stable exit codes:
//!
//! | exit | meaning                                   |
//! |------|-------------------------------------------|
//! | 0    | success                                   |
//! | 1    | numeric failure / bad argument            |
//! | 2    | missing file or parse error               |
//! | 3    | scenario or config validation failure     |
//! | 4    | checkpoint/scenario mismatch              |

use crate::error::{Error, Result};
use crate::eval::{run_eval, sig6, Comparison, EvalOptions, EvalReport};
use crate::sim::scenario::{builtin, Scenario, ShieldMode};
use crate::train::{Checkpoint, MetricsRecord, TrainConfig, Trainer};
use crate::trajectory::{read_trajectory, replay_validate, ReplayReport};
use std::io::Write;
use std::path::Path;

/// Resolve a scenario argument: an existing file path wins; otherwise a
/// built-in scenario name (`smoke`, `case1`, `case2`, `real-mimic`).
pub fn resolve_scenario(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if path.exists() {
        return Scenario::load(path);
    }
    if let Some(s) = builtin(arg) {
        return Ok(s);
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("no scenario file or built-in named `{arg}`"),
    )))
}

/// Map an error to the binary's exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Parse { .. } => 2,
        Error::Validation { .. } => 3,
        Error::Mismatch(_) => 4,
        _ => 1,
    }
}

/// `train <scenario> [--config] [--seed] [--updates] --out <dir>`
///
/// Writes `metrics.jsonl` (one JSON record per update), periodic
/// `checkpoint_<update>.json` files if configured, and `checkpoint.json` at
/// exit.
pub fn cmd_train(
    scenario_arg: &str,
    config_path: Option<&Path>,
    seed: u64,
    updates_override: Option<u64>,
    out_dir: &Path,
) -> Result<()> {
    let scenario = resolve_scenario(scenario_arg)?;
    let mut config = match config_path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(u) = updates_override {
        config.updates = u;
    }
    let updates = config.updates;
    let checkpoint_every = config.checkpoint_every;

    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);

    let mut trainer = Trainer::new(config, scenario, seed)?;
    for _ in 0..updates {
        let records = trainer.run(1, |record: &MetricsRecord| {
            writeln!(metrics, "{}", serde_json::to_string(record)?)?;
            Ok(())
        })?;
        let update = records[0].update;
        if checkpoint_every > 0 && update % checkpoint_every == 0 && update < updates {
            trainer
                .checkpoint()
                .save(out_dir.join(format!("checkpoint_{update:05}.json")))?;
        }
    }
    metrics.flush()?;

    trainer.checkpoint().save(out_dir.join("checkpoint.json"))?;
    Ok(())
}

/// `eval <checkpoint> <scenario> [--trials] [--seed] [--shield] [--out]`
pub fn cmd_eval(
    checkpoint_path: &Path,
    scenario_arg: &str,
    trials: u64,
    seed: u64,
    shield: Option<ShieldMode>,
    out_dir: Option<&Path>,
) -> Result<EvalReport> {
    if trials == 0 {
        return Err(Error::argument("--trials must be >= 1"));
    }
    let ckpt = Checkpoint::load(checkpoint_path)?;
    let scenario = resolve_scenario(scenario_arg)?;
    let opts = EvalOptions {
        trials,
        seed,
        shield,
        trajectory_dir: out_dir.map(|d| d.join("trajectories")),
    };
    let report = run_eval(&ckpt, &scenario, &opts)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let file = std::fs::File::create(dir.join("report.json"))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &report)?;
    }
    Ok(report)
}

/// `compare <ckpt A> <ckpt B> <scenario> [--trials] [--seed] [--out]`
pub fn cmd_compare(
    checkpoint_a: &Path,
    checkpoint_b: &Path,
    scenario_arg: &str,
    trials: u64,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<Comparison> {
    let a = cmd_eval(checkpoint_a, scenario_arg, trials, seed, None, None)?;
    let b = cmd_eval(checkpoint_b, scenario_arg, trials, seed, None, None)?;
    let comparison = Comparison::new(a, b);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let file = std::fs::File::create(dir.join("compare.json"))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &comparison)?;
    }
    Ok(comparison)
}

/// `replay <trajectory>` — validate kinematics and rewards, return the report.
pub fn cmd_replay(trajectory_path: &Path) -> Result<ReplayReport> {
    let traj = read_trajectory(trajectory_path)?;
    Ok(replay_validate(&traj))
}

/// `scenario validate <path>`
pub fn cmd_scenario_validate(path: &Path) -> Result<Scenario> {
    Scenario::load(path)
}

/// `scenario builtin <name> [--out <file>]` — dump a built-in scenario.
pub fn cmd_scenario_builtin(name: &str, out: Option<&Path>) -> Result<String> {
    let scenario = builtin(name).ok_or_else(|| {
        Error::argument(format!(
            "unknown built-in `{name}` (available: {})",
            crate::sim::scenario::BUILTIN_NAMES.join(", ")
        ))
    })?;
    let text = scenario.to_toml()?;
    if let Some(path) = out {
        std::fs::write(path, &text)?;
    }
    Ok(text)
}

/// Human summary of a replay report.
pub fn format_replay(report: &ReplayReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "steps {} drones {}\nmax kinematic error {}\nmax reward error   {}\n",
        report.steps,
        report.drones,
        sig6(report.max_kinematic_error),
        sig6(report.max_reward_error),
    ));
    if report.clean() {
        out.push_str("validation: clean\n");
    } else {
        for f in report.kinematic_flags.iter().chain(&report.reward_flags) {
            out.push_str(&format!(
                "FLAG {} step {} drone {}: {}\n",
                f.kind, f.step, f.drone_id, f.detail
            ));
        }
    }
    out
}
