//! `movnet` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use movnet::scenario::ScenarioError;
use movnet::simulator::InterferenceMode;

mod commands;
mod manifest;

use commands::SweepTask;
use manifest::{parse_assignment, usage, Command, RunManifest, UsageError};

#[derive(Parser, Debug)]
#[command(name = "movnet", version, about = "Two-tier static/mobile base-station network planning")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed; every random stream is derived from it.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Override a scenario key, e.g. `radio.power_static_w=10` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Configuration file (bare or as written by `optimize`).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SimFlags {
    /// Monte-Carlo replications.
    #[arg(long)]
    replications: Option<usize>,
    /// Interference realization in the simulator.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Mode {
    Expected,
    Bernoulli,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Task {
    Evaluate,
    Optimize,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Analytic delays, utilizations and violation probabilities.
    Evaluate(Common),
    /// Monte-Carlo simulation against the analytic means.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimFlags,
    },
    /// Deployment-cost minimization.
    Optimize(Common),
    /// Cross-product sweep over scenario keys.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `KEY=v1,v2,...`; keys joined by `+` move together (repeatable).
        #[arg(long = "grid", value_name = "KEY=VALUES")]
        grid: Vec<String>,
        /// What to run at every grid point.
        #[arg(long, value_enum, default_value = "optimize")]
        task: Task,
    },
}

fn manifest(command: Command, c: &Common, sim: Option<&SimFlags>, grid: &[String]) -> Result<RunManifest> {
    let overrides = c.set.iter().map(|s| parse_assignment(s)).collect::<Result<Vec<_>>>()?;
    let grid = grid
        .iter()
        .map(|g| {
            let (k, v) = parse_assignment(g)?;
            let values: Vec<String> = v
                .split(',')
                .map(|x| x.trim().to_string())
                .filter(|x| !x.is_empty())
                .collect();
            Ok((k, values))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunManifest {
        command,
        scenario_path: c.scenario.clone(),
        output_dir: c.out.clone(),
        seed: c.seed,
        overrides,
        grid,
        replications: sim.and_then(|s| s.replications),
        mode: sim.and_then(|s| s.mode).map(|m| match m {
            Mode::Expected => InterferenceMode::Expected,
            Mode::Bernoulli => InterferenceMode::Bernoulli,
        }),
        config_path: c.config.clone(),
    })
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Sub::Evaluate(c) | Sub::Optimize(c) => c,
        Sub::Simulate { common, .. } | Sub::Sweep { common, .. } => common,
    };
    if let Some(j) = common.jobs {
        if j == 0 {
            return Err(usage("--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    match &cli.command {
        Sub::Evaluate(c) => commands::cmd_evaluate(&manifest(Command::Evaluate, c, None, &[])?),
        Sub::Simulate { common, sim } => {
            if sim.replications == Some(0) {
                return Err(usage("--replications must be positive"));
            }
            commands::cmd_simulate(&manifest(Command::Simulate, common, Some(sim), &[])?)
        }
        Sub::Optimize(c) => commands::cmd_optimize(&manifest(Command::Optimize, c, None, &[])?),
        Sub::Sweep { common, grid, task } => {
            let task = match task {
                Task::Evaluate => SweepTask::Evaluate,
                Task::Optimize => SweepTask::Optimize,
            };
            commands::cmd_sweep(&manifest(Command::Sweep, common, None, grid)?, task)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some()
        || matches!(e.downcast_ref::<ScenarioError>(), Some(ScenarioError::NotFound(_)))
    {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
