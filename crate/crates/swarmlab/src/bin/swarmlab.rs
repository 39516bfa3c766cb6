//! Thin command-line front end over the library's [`cli`](swarmlab::cli)
//! functions.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use swarmlab::cli;
use swarmlab::sim::scenario::ShieldMode;

#[derive(Parser)]
#[command(name = "swarmlab", version, about = "Drone-swarm RL benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy on a scenario (file path or built-in name).
    Train {
        scenario: String,
        /// Training-config TOML; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the configured number of updates.
        #[arg(long)]
        updates: Option<u64>,
        /// Output directory for metrics.jsonl and checkpoints.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint with the deterministic mean-action policy.
    Eval {
        checkpoint: PathBuf,
        scenario: String,
        #[arg(long, default_value_t = 20)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the scenario's shield flag (on|off).
        #[arg(long)]
        shield: Option<ShieldMode>,
        /// Output directory for report.json and per-trial trajectories.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate two checkpoints side by side on the same scenario and seeds.
    Compare {
        checkpoint_a: PathBuf,
        checkpoint_b: PathBuf,
        scenario: String,
        #[arg(long, default_value_t = 20)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-validate an exported trajectory file.
    Replay { trajectory: PathBuf },
    /// Scenario utilities.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Parse and validate a scenario file.
    Validate { path: PathBuf },
    /// Print (or write) a built-in scenario as TOML.
    Builtin {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: Command) -> swarmlab::Result<()> {
    match command {
        Command::Train {
            scenario,
            config,
            seed,
            updates,
            out,
        } => {
            cli::cmd_train(&scenario, config.as_deref(), seed, updates, &out)?;
            println!("training complete; artifacts in {}", out.display());
        }
        Command::Eval {
            checkpoint,
            scenario,
            trials,
            seed,
            shield,
            out,
        } => {
            let report = cli::cmd_eval(&checkpoint, &scenario, trials, seed, shield, out.as_deref())?;
            println!("{report}");
        }
        Command::Compare {
            checkpoint_a,
            checkpoint_b,
            scenario,
            trials,
            seed,
            out,
        } => {
            let cmp = cli::cmd_compare(
                &checkpoint_a,
                &checkpoint_b,
                &scenario,
                trials,
                seed,
                out.as_deref(),
            )?;
            println!("{cmp}");
        }
        Command::Replay { trajectory } => {
            let report = cli::cmd_replay(&trajectory)?;
            print!("{}", cli::format_replay(&report));
        }
        Command::Scenario { command } => match command {
            ScenarioCommand::Validate { path } => {
                let s = cli::cmd_scenario_validate(&path)?;
                println!(
                    "ok: `{}` ({} drones, {} gates, {} obstacles)",
                    s.name,
                    s.drones.len(),
                    s.gates.len(),
                    s.obstacles.len()
                );
            }
            ScenarioCommand::Builtin { name, out } => {
                let text = cli::cmd_scenario_builtin(&name, out.as_deref())?;
                if out.is_none() {
                    print!("{text}");
                }
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match run(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::exit_code(&err) as u8)
        }
    }
}
