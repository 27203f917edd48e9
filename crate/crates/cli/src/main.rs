//! `dmlm`: prepare treebanks, train baseline and dependency-mixture language
//! models, sample from them, score samples, and export attention matrices.

mod commands;
mod failure;
mod io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use failure::Failure;

#[derive(Parser)]
#[command(name = "dmlm", version, about = "Dependency-based mixture language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse CoNLL-U treebanks into a training dataset.
    Prepare(commands::prepare::Args),
    /// Train one phase of a model.
    Train(commands::train::Args),
    /// Sample continuations with nucleus sampling.
    Generate(commands::generate::Args),
    /// Compute evaluation metrics.
    Eval(commands::eval::Args),
    /// Export teacher-forced dependency attention as CSV.
    AttnDump(commands::attn::Args),
}

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("DMLM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::input(format!("DMLM_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Internal(e.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = init_threads().and_then(|()| match cli.command {
        Command::Prepare(a) => commands::prepare::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Generate(a) => commands::generate::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::AttnDump(a) => commands::attn::run(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
