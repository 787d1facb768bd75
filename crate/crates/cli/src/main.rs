use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dqbrm_cli::commands::{execute, Command};
use dqbrm_cli::config::{ExperimentConfig, Overrides};
use dqbrm_cli::exit_code;

#[derive(Parser)]
#[command(name = "dqbrm", version, about = "Dynamic-QBRM ADP experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the solver for each seed and write traces, tables and a summary.
    Run(Args),
    /// Evaluate SAA-optimal, myopic and supplied policies.
    Benchmark(Args),
    /// Matched runs with and without risk-directed sampling.
    CompareRds(Args),
    /// Learned sampling density of one state-action pair on a grid.
    ExportDensity(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model name; required without --config.
    #[arg(long)]
    model: Option<String>,
    /// Seed (repeatable).
    #[arg(long)]
    seed: Vec<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Iteration budget per run.
    #[arg(long)]
    iters: Option<u64>,
    /// Risk-directed sampling.
    #[arg(long)]
    rds: Option<OnOff>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (cmd, args) = match cli.command {
        Cmd::Run(a) => (Command::Run, a),
        Cmd::Benchmark(a) => (Command::Benchmark, a),
        Cmd::CompareRds(a) => (Command::CompareRds, a),
        Cmd::ExportDensity(a) => (Command::ExportDensity, a),
    };
    let result = load(&args).and_then(|cfg| execute(cmd, cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dqbrm {}: {e:#}", cmd.name());
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn load(args: &Args) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.model) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(model)) => ExperimentConfig::for_model(model),
        (None, None) => return Err(dqbrm_cli::ConfigError("either --config or --model is required".into()).into()),
    };
    let mut seeds = args.seed.clone();
    seeds.extend(&args.seeds);
    cfg.apply(&Overrides {
        model: args.model.clone(),
        seeds: (!seeds.is_empty()).then_some(seeds),
        out: args.out.clone(),
        iterations: args.iters,
        rds: args.rds.map(|r| matches!(r, OnOff::On)),
    });
    Ok(cfg)
}
