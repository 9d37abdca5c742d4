use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use messrl::{
    cmd_evaluate, cmd_oracle, cmd_simulate, cmd_train, print_json, CliError, PolicySource, TrainOptions,
    EVALUATION_SEED_BASE,
};

#[derive(Parser)]
#[command(name = "messrl", version, about = "Mobile energy storage load restoration: train, evaluate, simulate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a TD3 agent; writes checkpoints and metrics.csv into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Episode budget (default from the config).
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Noise-free evaluation over consecutive seeds.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path, or one of random, greedy, idle, no-mess.
        #[arg(long)]
        checkpoint: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = EVALUATION_SEED_BASE)]
        seed: u64,
        /// Also write the report to this JSON file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one episode and write its per-step JSON trace.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path, or one of random, greedy, idle, no-mess.
        #[arg(long)]
        checkpoint: String,
        #[arg(long, default_value_t = EVALUATION_SEED_BASE)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a tiny scenario exactly and report optimality gaps.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the full value table to this JSON file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            out,
            episodes,
            seed,
        } => {
            let report = cmd_train(&TrainOptions {
                config,
                out,
                episodes,
                seed,
            })?;
            emit(&report);
        }
        Command::Evaluate {
            config,
            checkpoint,
            episodes,
            seed,
            out,
        } => {
            let report = cmd_evaluate(&config, &PolicySource::parse(&checkpoint), episodes, seed)?;
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                std::fs::write(&path, text).map_err(|source| CliError::Io { path, source })?;
            }
            emit(&report);
        }
        Command::Simulate {
            config,
            checkpoint,
            seed,
            out,
        } => {
            let trace = cmd_simulate(&config, &PolicySource::parse(&checkpoint), seed, &out)?;
            emit(&trace.summary);
        }
        Command::Oracle {
            config,
            checkpoint,
            seed,
            out,
        } => {
            let report = cmd_oracle(&config, checkpoint.as_deref(), seed, out.as_deref())?;
            emit(&report);
        }
    }
    Ok(())
}

fn emit<T: serde::Serialize>(value: &T) {
    // A closed stdout is not worth failing the command over.
    let _ = print_json(&mut std::io::stdout().lock(), value);
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Exit code 2 is reserved for divergence.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
