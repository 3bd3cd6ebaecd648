#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod exit;
mod output;

use config::{RunConfig, WeightSpec};
use exit::Failure;

/// Desensitized optimal control: solves, weight sweeps, Monte-Carlo dispersion and
/// co-state verification, written as CSV and JSON.
#[derive(Debug, Parser)]
#[command(name = "cdoc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one desensitized problem; writes solution.json and trajectory.csv.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Scalar weight alpha, Q = alpha I.
        #[arg(long)]
        weight: Option<f64>,
    },
    /// Solve across ascending weights; writes tradeoff.csv, sweep.json and one trajectory per weight.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ascending weights (default 0,1,100,1000,10000).
        #[arg(long)]
        weights: Option<String>,
    },
    /// Re-simulate the solved control under seeded parameter draws; writes mc_samples.csv,
    /// mc_trajectories.csv and mc_summary.json.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weight: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        /// Relative half-width of the draws.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Check co-states against finite-difference gradients; writes verify.json.
    Verify {
        #[command(flatten)]
        common: Common,
        /// theorem1, stm or all.
        #[arg(long)]
        suite: Option<String>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Registered problem name or a .toml / .json run configuration.
    target: String,
    /// Output directory (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of grid nodes.
    #[arg(long)]
    grid: Option<usize>,
    /// Seed of the parameter draws.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn config(&self) -> Result<RunConfig, Failure> {
        let mut cfg = RunConfig::resolve(&self.target)?;
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(n) = self.grid {
            cfg.solver.nodes = n;
            cfg.verify.nodes = n;
        }
        Ok(cfg)
    }
}

fn parse_weights(text: &str) -> Result<Vec<f64>, Failure> {
    let items: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(Failure::usage("empty weight list"));
    }
    items
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Failure::usage(format!("invalid weight `{s}`")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<PathBuf, Failure> {
    match cli.command {
        Command::Solve { common, weight } => {
            let mut cfg = common.config()?;
            if let Some(w) = weight {
                cfg.weight = Some(WeightSpec::Scalar(w));
            }
            commands::solve(&cfg)
        }
        Command::Sweep { common, weights } => {
            let mut cfg = common.config()?;
            if let Some(w) = weights {
                cfg.weights = Some(parse_weights(&w)?);
            }
            commands::sweep(&cfg)
        }
        Command::Montecarlo {
            common,
            weight,
            samples,
            fraction,
        } => {
            let mut cfg = common.config()?;
            if let Some(w) = weight {
                cfg.weight = Some(WeightSpec::Scalar(w));
            }
            if let Some(n) = samples {
                cfg.montecarlo.samples = n;
            }
            if let Some(f) = fraction {
                cfg.montecarlo.fraction = Some(f);
            }
            commands::montecarlo(&cfg)
        }
        Command::Verify { common, suite } => {
            let mut cfg = common.config()?;
            if let Some(s) = suite {
                cfg.verify.suite = s;
            }
            commands::verify(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_lists() {
        assert_eq!(parse_weights("0, 1,1e3").unwrap(), vec![0.0, 1.0, 1000.0]);
        assert_eq!(parse_weights("").unwrap_err().code, exit::USAGE);
        assert_eq!(parse_weights(" , ").unwrap_err().code, exit::USAGE);
        assert!(parse_weights("1,x").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
