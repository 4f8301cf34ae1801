//! Command-line front end: argument parsing, dispatch and exit codes.
//!
//! Machine output is line-delimited JSON on stdout; diagnostics go to
//! stderr. Exit code 0 on success, 1 on usage errors, 2 on runtime errors.

mod analysis;
mod pipeline;
mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use npc_core::http::Transport;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "npc",
    version,
    about = "Negative-prompt discovery for text-to-image alignment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the loop on one prompt and print its outcome.
    Run(RunArgs),
    /// Run the loop on a prompt file, writing a ledger and outcomes.
    Batch(BatchArgs),
    /// Score and order candidate negatives for a prompt.
    Rank(RankArgs),
    /// Salient-attention analysis of recorded dumps.
    #[command(subcommand)]
    Attn(AttnCommand),
    /// Mean attempts per candidate ordering under a synthetic model.
    Simulate(SimulateArgs),
    /// Benchmark metric tables from a ledger or recorded scores.
    Report(ReportArgs),
    /// Check candidate phrases, one per line.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct LoopArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Offline scene-model clients; no network access.
    #[arg(long)]
    mock: bool,
    /// Scripted verifier verdicts (JSON lines); requires --mock.
    #[arg(long)]
    script: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Prompt text, or a file holding a prompt record or plain text.
    #[arg(long)]
    prompt: String,
    #[command(flatten)]
    common: LoopArgs,
    /// Output directory for artifacts and the ledger.
    #[arg(long, default_value = "npc-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BatchArgs {
    /// Prompt records, one JSON object per line.
    #[arg(long)]
    prompts: PathBuf,
    #[command(flatten)]
    common: LoopArgs,
    /// Output directory for artifacts, ledger and outcomes.
    #[arg(long)]
    out: PathBuf,
    /// Pipelines in flight.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    parallel: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum EmbedBackendArg {
    Mock,
    Remote,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[arg(long)]
    prompt: String,
    /// File with one candidate per line, or a comma-separated list.
    #[arg(long)]
    candidates: String,
    #[arg(long, value_enum, default_value_t = EmbedBackendArg::Mock)]
    backend: EmbedBackendArg,
    /// Mock embedding seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Embedding service base URL for the remote backend.
    #[arg(long, default_value = "http://127.0.0.1:8765")]
    url: String,
    /// Comma-separated salient tokens; extracted from the prompt if absent.
    #[arg(long)]
    salient: Option<String>,
    /// salient, proposer or random.
    #[arg(long, default_value = "salient")]
    ordering: String,
}

#[derive(Debug, Subcommand)]
enum AttnCommand {
    /// Salient-attention share of one dump.
    Score {
        #[arg(long)]
        dump: PathBuf,
        /// Comma-separated token indices; defaults to the dump header's.
        #[arg(long)]
        salient: Option<String>,
    },
    /// Share of a variant dump relative to a baseline.
    Compare {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        variant: PathBuf,
        #[arg(long)]
        salient: Option<String>,
    },
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Comma-separated orderings: salient, proposer, random.
    #[arg(long, default_value = "salient,random")]
    ordering: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// top, uniform:P or power:E.
    #[arg(long, default_value = "top")]
    model: String,
    /// Run trials on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Metric {
    Geneval,
    Imagine,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    ledger: PathBuf,
    #[arg(long, value_enum)]
    metric: Metric,
    /// Recorded verdicts or scores; replaces the ledger's own verdicts.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Prompt records supplying task types.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Row label in the text table.
    #[arg(long, default_value = "NPC")]
    method: String,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    candidates: PathBuf,
}

/// Process-level resources handed to commands.
pub struct Context {
    /// Used only by non-mock commands that reach remote services.
    pub transport: Arc<dyn Transport>,
    /// Set by the interrupt handler.
    pub cancel: Arc<AtomicBool>,
}

/// Failure of a command after parsing.
#[derive(Debug)]
pub(crate) enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub(crate) type CliResult = Result<i32, CliError>;

/// Write one JSON value as a line.
pub(crate) fn emit<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let line = serde_json::to_string(value).map_err(CliError::runtime)?;
    writeln!(out, "{line}").map_err(CliError::runtime)
}

/// Parse `args` (program name first) and run the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write, ctx: &Context) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run(a) => pipeline::run_one(a, out, err, ctx),
        Command::Batch(a) => pipeline::batch(a, out, err, ctx),
        Command::Rank(a) => analysis::rank(a, out, ctx),
        Command::Attn(a) => analysis::attn(a, out),
        Command::Simulate(a) => analysis::simulate(a, out),
        Command::Report(a) => report::report(a, out, err),
        Command::Validate(a) => report::validate(a, out),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_RUNTIME
        }
    }
}
