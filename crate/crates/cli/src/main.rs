mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Failure;
use crate::config::{keys_help, RunConfig};

/// Exit statuses besides 0 (success) and 2 (usage errors, reported by clap).
const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 3;
const EXIT_MISSING_INPUT: u8 = 4;

const AFTER_HELP: &str = "\
Every command writes `<paths.work>/<command>.manifest` echoing the resolved configuration.

Exit status: 0 success, 1 runtime failure, 2 usage error or unknown command,
3 invalid configuration, 4 missing input file.";

#[derive(Parser, Debug)]
#[command(name = "relemb", version, about = "Relevance-based word embeddings: indexing, training, expansion and classification")]
#[command(after_long_help = AFTER_HELP)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(short, long, global = true, env = "RELEMB_CONFIG", value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key; repeatable.
    #[arg(short = 's', long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Index `paths.corpus` into `paths.index` and write `<work>/vocab.tsv`.
    BuildIndex,
    /// Clean `paths.query_log` into `paths.queries`.
    FilterQueries,
    /// Retrieve feedback documents for `paths.queries` and write `paths.training` and `paths.noise`.
    GenTrain,
    /// Train a model from `paths.training`; writes the checkpoint under `paths.model` and `<model>.loss.tsv`.
    Train,
    /// Write the top `expansion.m` model terms of every `paths.heldout` query to `<work>/expansion.tsv`.
    Expand,
    /// Rank `paths.heldout` queries into `paths.run`, expanded when `search.expand` is true.
    Search,
    /// Label `paths.heldout` queries with centroids from `paths.labels`; writes `<work>/predictions.tsv`.
    Classify,
    /// Score `paths.run` against `paths.qrels` into `<work>/metrics.txt`.
    Eval,
    /// Cross-validate expansion parameters on `paths.heldout`; writes `<work>/cv-expansion.txt`.
    CvExpansion,
    /// Cross-validate classification on `paths.labels`; writes `<work>/cv-classify.txt`.
    CvClassify,
    /// List every configuration key with its default.
    Keys,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::BuildIndex => "build-index",
            Command::FilterQueries => "filter-queries",
            Command::GenTrain => "gen-train",
            Command::Train => "train",
            Command::Expand => "expand",
            Command::Search => "search",
            Command::Classify => "classify",
            Command::Eval => "eval",
            Command::CvExpansion => "cv-expansion",
            Command::CvClassify => "cv-classify",
            Command::Keys => "keys",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if cli.command == Command::Keys {
        print!("{}", keys_help());
        return ExitCode::SUCCESS;
    }
    if let Some(path) = &cli.config {
        if !path.is_file() {
            eprintln!("error: configuration file {} not found", path.display());
            return ExitCode::from(EXIT_MISSING_INPUT);
        }
    }
    let config = match RunConfig::resolve(cli.config.as_deref(), &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match commands::run(cli.command.name(), &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::MissingInput(path)) => {
            eprintln!("error: input {} not found", path.display());
            ExitCode::from(EXIT_MISSING_INPUT)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
