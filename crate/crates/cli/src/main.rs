//! Command-line front end of the experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rbmr_core::harness::{self, ExperimentConfig, RunRecord, THREADS_ENV};

#[derive(Parser, Debug)]
#[command(
    name = "rbmr",
    version,
    about = "Random batch methods for interacting particle systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 means one per CPU.
    #[arg(long, global = true, env = THREADS_ENV, default_value_t = 0)]
    threads: usize,

    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Use common random numbers across the step-size sweep.
    #[arg(long, global = true)]
    crn: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Run the configured schemes and write trajectory snapshots.
    Simulate,
    /// Coupled strong error across step sizes, with a log-log slope fit.
    Converge,
    /// Clock-law, moment and Hölder validators.
    Lemmas,
    /// Marginal Wasserstein-2 distance against the coupled error.
    Wasserstein,
    /// Print the resolved configuration, defaults included.
    PrintConfig,
}

fn resolve(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("reading configuration {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if cli.crn {
        cfg.crn = true;
    }
    Ok(cfg)
}

fn report(rec: &RunRecord) {
    for line in &rec.summary {
        println!("{line}");
    }
    for file in &rec.files {
        println!("wrote {}", file.display());
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve(&cli)?;
    let rec = match cli.command {
        Command::PrintConfig => {
            print!("{}", harness::cmd_print_config(&cfg));
            return Ok(());
        }
        Command::Simulate => harness::cmd_simulate(&cfg, cli.threads)?,
        Command::Converge => harness::cmd_converge(&cfg, cli.threads)?,
        Command::Lemmas => harness::cmd_lemmas(&cfg, cli.threads)?,
        Command::Wasserstein => harness::cmd_wasserstein(&cfg, cli.threads)?,
    };
    report(&rec);
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
