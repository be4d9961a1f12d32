use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::ConfigFlags;

/// Fuzzy recurrent stochastic configuration networks.
#[derive(Parser)]
#[command(name = "frscn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/val/test CSVs of the synthetic plant plus meta.json
    GenData(ConfigFlags),
    /// Train a model on --data; writes model.json and train_report.json
    Train(ConfigFlags),
    /// Run --model over --data; writes predictions.csv (and fire_strengths.csv)
    Predict(ConfigFlags),
    /// NRMSE of --model on --data, or seeded trials on --data/--val/--test without --model
    Eval(ConfigFlags),
    /// Adapt the readout of --model over --data; writes model.json and online_errors.csv
    Online(ConfigFlags),
    /// Search rules x nodes on --data/--val; writes grid.csv and summary.json
    Gridsearch(ConfigFlags),
}

/// Bad invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn run(command: Command) -> anyhow::Result<()> {
    let (flags, action): (&ConfigFlags, fn(&config::RunConfig) -> anyhow::Result<()>) = match &command {
        Command::GenData(f) => (f, commands::gen_data),
        Command::Train(f) => (f, commands::train),
        Command::Predict(f) => (f, commands::predict),
        Command::Eval(f) => (f, commands::eval),
        Command::Online(f) => (f, commands::online),
        Command::Gridsearch(f) => (f, commands::gridsearch),
    };
    let cfg = flags
        .resolve()
        .map_err(|e| UsageError(format!("configuration error: {e:#}")))?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    }
    action(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
