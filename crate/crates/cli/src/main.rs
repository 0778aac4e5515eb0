use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod output;

use config::Config;
use output::Output;

#[derive(Parser, Debug)]
#[command(name = "proact", version, about = "Proactive and reactive conversational retrieval benchmark")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Use deterministic offline LLM and embedding providers.
    #[arg(long, global = true)]
    mock_providers: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build conversations and splits from raw threads.
    Ingest(commands::data::IngestArgs),
    /// Print statistics of a conversation split.
    Stats(commands::data::StatsArgs),
    /// Build or query a BM25 index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Produce a run file with a retriever.
    Run(commands::retrieval::RunArgs),
    /// Score runs against qrels.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Language-model grounded retrieval over conversations.
    Lmgr(commands::retrieval::LmgrArgs),
    /// Build judgment pools from runs.
    Pool(commands::annotation::PoolArgs),
    /// Serve or export human judgments.
    #[command(subcommand)]
    Annotate(AnnotateCommand),
    /// Sample balanced training pairs for a retrieval-decision classifier.
    Pairs(commands::data::PairsArgs),
}

#[derive(Subcommand, Debug)]
enum IndexCommand {
    Build(commands::data::IndexBuildArgs),
    Search(commands::data::IndexSearchArgs),
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    Reactive(commands::evaluate::EvalArgs),
    Proactive(commands::evaluate::EvalArgs),
    /// Paired permutation test between two runs.
    Compare(commands::evaluate::CompareArgs),
}

#[derive(Subcommand, Debug)]
enum AnnotateCommand {
    Serve(commands::annotation::ServeArgs),
    Export(commands::annotation::ExportArgs),
}

/// Settings every command can use.
pub struct Context {
    pub config: Config,
    pub out: Output,
    pub mock_providers: bool,
}


fn run(cli: Cli) -> proact_core::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(proact_core::Error::InvalidArgument("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| proact_core::Error::InvalidArgument(e.to_string()))?;
    }
    let mut config = Config::load(cli.config.as_deref())?;
    config.apply_env(|k| std::env::var(k).ok())?;
    let mut ctx = Context {
        config,
        out: Output::new(cli.format),
        mock_providers: cli.mock_providers,
    };
    match cli.command {
        Command::Ingest(a) => commands::data::ingest(&mut ctx, a),
        Command::Stats(a) => commands::data::stats(&mut ctx, a),
        Command::Index(IndexCommand::Build(a)) => commands::data::index_build(&mut ctx, a),
        Command::Index(IndexCommand::Search(a)) => commands::data::index_search(&mut ctx, a),
        Command::Run(a) => commands::retrieval::run(&mut ctx, a),
        Command::Eval(EvalCommand::Reactive(a)) => commands::evaluate::reactive(&mut ctx, a),
        Command::Eval(EvalCommand::Proactive(a)) => commands::evaluate::proactive(&mut ctx, a),
        Command::Eval(EvalCommand::Compare(a)) => commands::evaluate::compare(&mut ctx, a),
        Command::Lmgr(a) => commands::retrieval::lmgr(&mut ctx, a),
        Command::Pool(a) => commands::annotation::pool(&mut ctx, a),
        Command::Annotate(AnnotateCommand::Serve(a)) => commands::annotation::serve(&mut ctx, a),
        Command::Annotate(AnnotateCommand::Export(a)) => commands::annotation::export(&mut ctx, a),
        Command::Pairs(a) => commands::data::pairs(&mut ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
