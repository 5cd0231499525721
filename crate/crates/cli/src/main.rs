//! `cptrie`: build a CP-Trie from plain text, pick evaluation prefixes, and
//! score truncation samplers against the trie's data support.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cptrie_core::calibrate::{CalibrateError, CalibrationSpec};
use cptrie_core::metrics::MetricsError;
use cptrie_core::report::Format;
use cptrie_core::samplers::{Method, SamplerError};
use cptrie_core::trie::TrieError;

use commands::{format_parser, method_parser, ProtocolFailure, UsageError};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_PROTOCOL: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "cptrie",
    version,
    about = "Context-preserving trie evaluation of truncation samplers"
)]
struct Cli {
    /// More logging (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a trie from a plain-text corpus and print its statistics.
    BuildTrie(BuildTrieArgs),
    /// Print statistics of a saved trie.
    Stats(StatsArgs),
    /// Select evaluation prefixes and write them as JSON lines.
    SelectNodes(SelectNodesArgs),
    /// Write count-ratio distributions for the selected prefixes.
    ExportToy(ExportToyArgs),
    /// Score one sampler configuration.
    Evaluate(EvaluateArgs),
    /// Search the parameter that reaches a target average risk.
    Calibrate(CalibrateArgs),
    /// Render evaluation or calibration reports as a table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct BuildTrieArgs {
    /// Corpus files or directories (one document per file).
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Treat every non-empty line of each input file as a document.
    #[arg(long)]
    lines: bool,
    /// Known words, one per line.
    #[arg(long)]
    wordlist: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// key = value file (abbreviations, heading_max_units).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the printed statistics here.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Indented trie JSON.
    #[arg(long)]
    pretty: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    trie: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectNodesArgs {
    #[arg(long)]
    trie: PathBuf,
    #[arg(long, default_value_t = 10)]
    roots: usize,
    #[arg(long, default_value_t = 2)]
    children: usize,
    #[arg(long, default_value_t = 6)]
    max_depth: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportToyArgs {
    #[arg(long)]
    trie: PathBuf,
    #[arg(long)]
    nodes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Mass spread over trie words outside each support.
    #[arg(long, default_value_t = 0.0)]
    smoothing: f64,
}

#[derive(Debug, Args)]
pub struct EvalInputs {
    #[arg(long)]
    trie: PathBuf,
    #[arg(long)]
    nodes: PathBuf,
    /// Distribution records, one JSON object per line.
    #[arg(long)]
    dists: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    inputs: EvalInputs,
    #[arg(long, value_parser = method_parser)]
    method: Method,
    #[arg(long, allow_negative_numbers = true)]
    param: f64,
    #[arg(long)]
    out: PathBuf,
    /// Per-node entropy and k* as CSV.
    #[arg(long)]
    scatter: Option<PathBuf>,
    /// Fail instead of excluding nodes whose support is not covered.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    inputs: EvalInputs,
    #[arg(long, value_parser = method_parser)]
    method: Method,
    #[arg(long, allow_negative_numbers = true)]
    target_risk: f64,
    #[arg(long, default_value_t = CalibrationSpec::<f64>::DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[arg(long, default_value_t = CalibrationSpec::<f64>::DEFAULT_GRID_POINTS)]
    grid: usize,
    #[arg(long, default_value_t = CalibrationSpec::<f64>::DEFAULT_MAX_REFINEMENTS)]
    max_refinements: usize,
    /// Search interval as lo,hi (defaults depend on the method).
    #[arg(long)]
    range: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON files; repeat to merge methods into one table.
    #[arg(long = "in", required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, default_value = "markdown", value_parser = format_parser)]
    format: Format,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<ProtocolFailure>() {
            return EXIT_PROTOCOL;
        }
        if let Some(e) = cause.downcast_ref::<CalibrateError>() {
            match e {
                CalibrateError::InvalidSpec(_) => return EXIT_USAGE,
                CalibrateError::Unachievable => return EXIT_PROTOCOL,
                CalibrateError::Metrics(m) if m.is_protocol_failure() => return EXIT_PROTOCOL,
                _ => {}
            }
        }
        if let Some(e) = cause.downcast_ref::<MetricsError>() {
            if e.is_protocol_failure() {
                return EXIT_PROTOCOL;
            }
        }
        if let Some(SamplerError::InvalidParameter { .. } | SamplerError::UnknownMethod(_)) =
            cause.downcast_ref()
        {
            return EXIT_USAGE;
        }
        if let Some(TrieError::InvalidSelection(_)) = cause.downcast_ref() {
            return EXIT_USAGE;
        }
    }
    EXIT_DATA
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let result = match &cli.command {
        Command::BuildTrie(args) => commands::build_trie(args),
        Command::Stats(args) => commands::stats(args),
        Command::SelectNodes(args) => commands::select_nodes(args),
        Command::ExportToy(args) => commands::export_toy(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Calibrate(args) => commands::calibrate(args),
        Command::Report(args) => commands::report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
