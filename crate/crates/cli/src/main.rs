mod commands;
mod error;
mod io;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{CliError, Code};

/// Rule mining, weak labeling and tagging for aspect and opinion terms.
#[derive(Debug, Parser)]
#[command(name = "termine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mine extraction rules of one kind from annotated parses.
    Mine(commands::MineArgs),
    /// Apply aspect and opinion rules to parsed sentences.
    Label(commands::LabelArgs),
    /// Train a tagger on gold and, optionally, rule-labeled data.
    Train(commands::TrainArgs),
    /// Score a model or a pair of rule sets on annotated test data.
    Eval(commands::EvalArgs),
    /// Run every stage from one TOML config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic corpus.
    Synth(commands::SynthArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Mine(a) => commands::mine(&a),
        Command::Label(a) => commands::label(&a),
        Command::Train(a) => commands::train_command(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Pipeline { config } => pipeline::run(&config),
        Command::Synth(a) => commands::synth(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::new(Code::Usage, first.trim_start_matches("error: "));
            eprintln!("{err}");
            return ExitCode::from(Code::Usage.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.code.exit_code() as u8)
        }
    }
}
