use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use tracing::Level;

mod ablate;
mod record;
mod repair;
mod report;
mod settings;
mod workspace;

/// Conversational, test-feedback-driven program repair.
#[derive(Parser, Debug)]
#[command(name = "convrepair", version)]
struct Cli {
    /// Config file of `key = value` settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Repair bugs and append one JSONL record per bug.
    Repair(repair::RepairArgs),
    /// Run a grid of settings and tabulate plausible counts and costs.
    Ablate(ablate::AblateArgs),
    /// Summarize results files.
    Report(report::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => Level::WARN,
        1 => Level::INFO,
        2 => Level::DEBUG,
        _ => Level::TRACE,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();

    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Repair(args) => repair::run(args, config),
        Command::Ablate(args) => ablate::run(args, config),
        Command::Report(args) => report::run(args),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
