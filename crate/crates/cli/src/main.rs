//! `lasp`: command-line client of the grounding service.
//!
//! Commands talk to `--server` when given, otherwise to a service started
//! in-process on a loopback port. Exit codes: 0 success, 1 runtime error,
//! 2 invalid input.

mod commands;
mod config;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lasp_core::api::SourceKind;
use lasp_core::expr::RelationName;

use crate::config::ConfigFile;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<lasp_client::ClientError> for CliError {
    fn from(e: lasp_client::ClientError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lasp", version, about = "Training-free 3D visual grounding")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Base URL of a running service; by default one is started in-process.
    #[arg(long, global = true)]
    pub server: Option<String>,
    /// JSON run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Chat-completion base URL for the in-process service.
    #[arg(long, global = true)]
    pub llm_endpoint: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn utterances or expression JSON into canonical expressions.
    Parse(ParseArgs),
    /// Ground an expression in a scene.
    Ground(GroundArgs),
    /// Search for a relation encoder that passes a test suite.
    Optimize(OptimizeArgs),
    /// Run a benchmark dataset and write a report.
    Bench(BenchArgs),
    /// Write the seeded synthetic mini-benchmark.
    GenBench(GenBenchArgs),
    /// Write a test suite labelled by a builtin encoder.
    GenSuite(GenSuiteArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Run a canned chat-completion endpoint.
    StubLlm(StubArgs),
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub utterance: Option<String>,
    /// An expression JSON file, or JSON lines of expressions or utterance strings.
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Pre-parsed expressions answering utterances without any LLM call.
    #[arg(long)]
    pub offline_expr: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GroundArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub expr: PathBuf,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Include the score after each clause.
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub relation: RelationName,
    #[arg(long)]
    pub suite: PathBuf,
    /// Directory holding `<scene_id>.json` for every suite case.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub source: Option<SourceArg>,
    #[arg(long)]
    pub n_iter: Option<usize>,
    #[arg(long)]
    pub n_sample: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Read if present, then overwritten with the updated registry.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Starting definition for the mutation source.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// JSON-lines log of every evaluated candidate.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SourceArg {
    Mutate,
    Llm,
}

impl From<SourceArg> for SourceKind {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Mutate => SourceKind::Mutate,
            SourceArg::Llm => SourceKind::Llm,
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory with `expressions.jsonl` and `scenes/`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for CSV plot data and its manifest.
    #[arg(long)]
    pub plots: Option<PathBuf>,
    /// Pick uniformly among objects of the target category instead.
    #[arg(long)]
    pub random_choice: bool,
    /// Leave wall-clock fields at zero for byte-stable reports.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenBenchArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenSuiteArgs {
    #[arg(long)]
    pub relation: RelationName,
    #[arg(long, default_value_t = 37)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Receives `suite.json` and `scenes/`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Registry file loaded at startup and rewritten on every change.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Directory overriding the bundled prompt templates.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StubArgs {
    #[arg(long, default_value = "127.0.0.1:8090")]
    pub addr: SocketAddr,
    /// One reply per file, served in file-name order and cycled.
    #[arg(long)]
    pub replies: Option<PathBuf>,
    /// Literal reply; may be repeated.
    #[arg(long)]
    pub reply: Vec<String>,
    /// Answer every request with this HTTP status.
    #[arg(long)]
    pub status: Option<u16>,
}

impl GlobalArgs {
    /// Global settings that also live in the config file.
    pub fn as_layer(&self) -> ConfigFile {
        ConfigFile {
            llm_endpoint: self.llm_endpoint.clone(),
            ..Default::default()
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
