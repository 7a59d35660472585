//! `marlmem`: runs the memoryful-vs-memoryless experiments and writes CSV.
//!
//! Data goes to stdout or `--out`; summaries and errors go to stderr.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, ProtocolChoice};

#[derive(Parser, Debug)]
#[command(name = "marlmem", version, about = "Memoryful vs memoryless multi-agent experiments")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Episodes per evaluated policy or table cell.
    #[arg(long, global = true)]
    episodes: Option<usize>,
    /// Write the CSV here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Flat `key = value` file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for episode evaluation (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Suppress the summary on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Uniform, counter and oracle policies against resampled RPS opponents.
    RpsEval {
        /// Rounds per episode.
        #[arg(long)]
        horizon: Option<usize>,
        /// Discount on the counter policy's action counts, in (0, 1].
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Trace of two RPS players running simultaneous gradient ascent.
    RpsColearn {
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Keep every n-th row.
        #[arg(long)]
        every: Option<usize>,
        /// Starting strategy as `rock,paper,scissors`.
        #[arg(long, allow_hyphen_values = true)]
        pi: Option<String>,
        /// Opponent's starting strategy.
        #[arg(long, allow_hyphen_values = true)]
        pi_prime: Option<String>,
    },
    /// Reward of each ego policy against each opponent behaviour type.
    TrafficTable,
    /// Naive pursuit vs behaviour-based signalling in the three-lane task.
    Threelane {
        #[arg(long)]
        lane_length: Option<u8>,
        #[arg(long)]
        fuel_cost: Option<f64>,
        #[arg(long)]
        time_cost: Option<f64>,
        #[arg(long)]
        target_reward: Option<f64>,
    },
    /// Optimal memoryless mover table and its value under noisy moves.
    SpeakermoverSearch {
        /// Noise levels to sweep, comma-separated (0 is always included).
        #[arg(long)]
        noise: Option<String>,
        #[arg(long, value_enum)]
        protocol: Option<ProtocolChoice>,
        /// Write the noise-free optimal table here, one `position token move` per line.
        #[arg(long)]
        policy_out: Option<PathBuf>,
    },
}

/// Defaults, then the config file, then flags.
fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.common.config {
        cfg.apply_file(path)?;
    }
    let c = &cli.common;
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.episodes {
        cfg.episodes = Some(v);
    }
    if let Some(v) = c.workers {
        cfg.workers = v;
    }
    match &cli.command {
        Command::RpsEval { horizon, gamma } => {
            cfg.horizon = horizon.unwrap_or(cfg.horizon);
            cfg.gamma = gamma.unwrap_or(cfg.gamma);
        }
        Command::RpsColearn {
            eta,
            steps,
            every,
            pi,
            pi_prime,
        } => {
            cfg.eta = eta.unwrap_or(cfg.eta);
            cfg.steps = steps.unwrap_or(cfg.steps);
            cfg.every = every.unwrap_or(cfg.every);
            if let Some(v) = pi {
                cfg.set("pi", v)?;
            }
            if let Some(v) = pi_prime {
                cfg.set("pi_prime", v)?;
            }
        }
        Command::TrafficTable => {}
        Command::Threelane {
            lane_length,
            fuel_cost,
            time_cost,
            target_reward,
        } => {
            cfg.lane_length = lane_length.unwrap_or(cfg.lane_length);
            cfg.fuel_cost = fuel_cost.unwrap_or(cfg.fuel_cost);
            cfg.time_cost = time_cost.unwrap_or(cfg.time_cost);
            cfg.target_reward = target_reward.unwrap_or(cfg.target_reward);
        }
        Command::SpeakermoverSearch { noise, protocol, .. } => {
            if let Some(v) = noise {
                cfg.set("noise", v)?;
            }
            cfg.protocol = protocol.unwrap_or(cfg.protocol);
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    let out = match &cli.command {
        Command::RpsEval { .. } => commands::rps_eval(&cfg)?,
        Command::RpsColearn { .. } => commands::colearn(&cfg)?,
        Command::TrafficTable => commands::traffic_table(&cfg)?,
        Command::Threelane { .. } => commands::threelane(&cfg)?,
        Command::SpeakermoverSearch { .. } => commands::speakermover(&cfg)?,
    };
    if let (Command::SpeakermoverSearch { policy_out: Some(path), .. }, Some(policy)) =
        (&cli.command, &out.policy)
    {
        std::fs::write(path, policy).with_context(|| format!("writing {}", path.display()))?;
    }
    match &cli.common.out {
        Some(path) => {
            std::fs::write(path, &out.data).with_context(|| format!("writing {}", path.display()))?
        }
        None => std::io::stdout()
            .lock()
            .write_all(out.data.as_bytes())
            .context("writing to stdout")?,
    }
    if !cli.common.quiet {
        eprint!("{}", out.summary);
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("marlmem").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        std::fs::write(&path, "seed = 5\nhorizon = 30\ngamma = 0.8\n").unwrap();
        let cli = parse(&["rps-eval", "--config", path.to_str().unwrap(), "--gamma", "0.9"]);
        let cfg = resolve(&cli).unwrap();
        assert_eq!((cfg.seed, cfg.horizon, cfg.gamma), (5, 30, 0.9));
    }

    #[test]
    fn common_flags_follow_the_subcommand() {
        let cli = parse(&["traffic-table", "--seed", "3", "--episodes", "10", "--workers", "2"]);
        let cfg = resolve(&cli).unwrap();
        assert_eq!((cfg.seed, cfg.episodes, cfg.workers), (3, Some(10), 2));
    }

    #[test]
    fn strategy_flags_parse_triples() {
        let cli = parse(&["rps-colearn", "--pi", "0.2,0.3,0.5", "--steps", "0"]);
        assert_eq!(resolve(&cli).unwrap().pi, [0.2, 0.3, 0.5]);
        let cli = parse(&["rps-colearn", "--pi", "0.2,0.3"]);
        assert!(resolve(&cli).is_err());
    }

    #[test]
    fn bad_flag_values_are_usage_errors() {
        let argv = |a: &[&str]| Cli::try_parse_from(std::iter::once("marlmem").chain(a.iter().copied()));
        assert!(argv(&["rps-eval", "--horizon", "many"]).is_err());
        assert!(argv(&["speakermover-search", "--protocol", "sideways"]).is_err());
        assert!(argv(&["no-such-command"]).is_err());
    }
}
