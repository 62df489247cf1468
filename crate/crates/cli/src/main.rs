//! `seft`: train toy models under freezing policies, analyze recorded traces,
//! preview budget plans and summarize report directories.

mod analyze;
mod manifest;
mod plan;
mod report;
mod train;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seft::SeftError;

#[derive(Debug, Parser)]
#[command(name = "seft", version, about = "Semantic layer-freezing experiments")]
struct Cli {
    /// Print progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Suppress the summary on stdout.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finetune toy decoders under a freezing policy or budget plan.
    Train(train::TrainArgs),
    /// Deviation analysis of a recorded trace file.
    AnalyzeTrace(analyze::AnalyzeArgs),
    /// Quotas, infill order and expected saving of a budget plan.
    PlanBudget(plan::PlanArgs),
    /// Summarize a train output directory as a comparison table.
    Report(report::ReportArgs),
}

/// Output handling shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Directory for result files and the run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
pub struct Verbosity {
    pub level: u8,
    pub quiet: bool,
}

impl Verbosity {
    pub fn progress(&self, msg: impl AsRef<str>) {
        if self.level > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn detail(&self, msg: impl AsRef<str>) {
        if self.level > 1 {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Stdout output; a closed pipe (e.g. `| head`) is not an error.
    pub fn summary(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            let _ = writeln!(std::io::stdout().lock(), "{}", msg.as_ref());
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Divergence(m) => m,
        }
    }
}

impl From<SeftError> for CliError {
    fn from(e: SeftError) -> Self {
        match e {
            SeftError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            SeftError::Divergence { .. } => CliError::Divergence(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("i/o error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("json error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let v = Verbosity {
        level: cli.verbose,
        quiet: cli.quiet,
    };
    let result = match cli.command {
        Command::Train(args) => train::run(args, v),
        Command::AnalyzeTrace(args) => analyze::run(args, v),
        Command::PlanBudget(args) => plan::run(args, v),
        Command::Report(args) => report::run(args, v),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
