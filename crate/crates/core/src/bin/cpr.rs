use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cpr::harness::config::ExperimentConfig;
use cpr::harness::report::report;
use cpr::harness::run::{run_experiment, scale_evaluate, RunOutput};
use cpr::harness::HarnessError;
use cpr::par::Execution;

#[derive(Parser)]
#[command(
    name = "cpr",
    version,
    about = "Train and evaluate communicating agents with power regularization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config, evaluate and write metrics.
    Run(RunArgs),
    /// Evaluate saved checkpoints instead of training.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint file, or a directory of `seed_<n>.json` files.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate grid-coverage checkpoints on another team composition.
    Scale {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Target composition as `n_adversarial,n_cooperative`.
        #[arg(long, value_parser = parse_composition)]
        composition: (usize, usize),
    },
    /// Summarize metrics files; later files are compared with the first.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's seed list with a single seed.
    #[arg(long)]
    seed_override: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Also evaluate with all messages forced to NULL.
    #[arg(long)]
    no_comm: bool,
    /// Also evaluate with adversarial messages on the designated channels.
    #[arg(long)]
    adv_comm: bool,
    #[arg(long)]
    log_power: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Disable data-parallel execution.
    #[arg(long)]
    sequential: bool,
}

fn parse_composition(s: &str) -> Result<(usize, usize), String> {
    let s = s.trim_matches(|c| c == '[' || c == ']');
    let (a, c) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `n_adv,n_coop`, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(a)?, parse(c)?))
}

impl RunArgs {
    fn load(&self) -> Result<(ExperimentConfig, Execution), HarnessError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed_override {
            cfg.seeds = vec![seed];
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        cfg.ablations.no_comm |= self.no_comm;
        cfg.ablations.adv_comm |= self.adv_comm;
        cfg.log_power |= self.log_power;
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        cfg.validate()?;
        let exec = if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        };
        Ok((cfg, exec))
    }
}

fn print_summary(out: &RunOutput) {
    for g in &out.summary.groups {
        let coverage = g
            .mean_coverage_pct
            .map_or_else(String::new, |c| format!(" coverage {c:.2}%"));
        println!(
            "{}: mean {:.3} (∓ {:.3}) success {:.3} length {:.3}{coverage} over {} episodes",
            g.run_id, g.mean, g.std, g.success_rate, g.mean_episode_len, g.episodes
        );
    }
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run(args) => {
            let (cfg, exec) = args.load()?;
            print_summary(&run_experiment(&cfg, exec)?);
        }
        Command::Evaluate { run, checkpoint } => {
            let (mut cfg, exec) = run.load()?;
            cfg.checkpoint = Some(checkpoint);
            print_summary(&run_experiment(&cfg, exec)?);
        }
        Command::Scale {
            run,
            checkpoint,
            composition,
        } => {
            let (mut cfg, exec) = run.load()?;
            cfg.checkpoint = Some(checkpoint);
            print_summary(&scale_evaluate(&cfg, composition, exec)?);
        }
        Command::Report { metrics } => {
            let paths: Vec<&std::path::Path> = metrics.iter().map(PathBuf::as_path).collect();
            print!("{}", report(&paths)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
