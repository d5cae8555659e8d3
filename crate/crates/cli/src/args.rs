use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use cloneguard_core::engine::{Denominator, SizeClass, DEFAULT_MIN_TOKENS, DEFAULT_THETA};

#[derive(Debug, Parser)]
#[command(name = "cloneguard", version, about = "Token-based clone detection with license compliance checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenominatorArg {
    Max,
    Query,
}

impl From<DenominatorArg> for Denominator {
    fn from(d: DenominatorArg) -> Self {
        match d {
            DenominatorArg::Max => Denominator::Max,
            DenominatorArg::Query => Denominator::Query,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SizeClassArg {
    Small,
    Medium,
    Large,
}

impl From<SizeClassArg> for SizeClass {
    fn from(s: SizeClassArg) -> Self {
        match s {
            SizeClassArg::Small => SizeClass::Small,
            SizeClassArg::Medium => SizeClass::Medium,
            SizeClassArg::Large => SizeClass::Large,
        }
    }
}

/// Clone threshold settings.
#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    /// Fraction of the larger block's tokens that must be shared.
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    /// Blocks with fewer tokens are ignored.
    #[arg(long, default_value_t = DEFAULT_MIN_TOKENS)]
    pub min_tokens: u64,
    #[arg(long, value_enum, default_value_t = DenominatorArg::Max)]
    pub denominator: DenominatorArg,
    /// Report a block paired with itself.
    #[arg(long)]
    pub keep_self_pairs: bool,
}

/// How source trees are turned into blocks.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Comma-separated list of file, module, function.
    #[arg(long, default_value = "file")]
    pub granularity: String,
    /// License rule file (JSON list of {license_id, patterns}).
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// License applied to blocks nothing else licenses.
    #[arg(long)]
    pub default_license: Option<String>,
    /// Source file extensions to ingest.
    #[arg(long = "extension", default_value = "py")]
    pub extensions: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a directory, archive or StackExchange dump into a corpus file.
    Ingest(IngestArgs),
    /// Detect clones between a corpus and a query set in this process.
    Query(QueryArgs),
    /// Run an apprentice or manager service.
    Serve(ServeArgs),
    /// Time cold and warm query runs.
    Bench(BenchArgs),
    /// Draw a reproducible sample of pairs from a report.
    Sample(SampleArgs),
    /// Search post text for attribution notices.
    Attribution(AttributionArgs),
    /// Upload a corpus to an apprentice.
    Push(PushArgs),
    /// Register an apprentice with a manager.
    Register(RegisterArgs),
    /// Run a query set across a manager's apprentices.
    Dispatch(DispatchArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory, .zip, .tar.gz, single source file, or Posts.xml.
    pub source: PathBuf,
    /// Corpus file to write.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Treat the source as a StackExchange Posts.xml dump.
    #[arg(long)]
    pub stackexchange: bool,
    /// Keep only posts with this tag (and answers to them).
    #[arg(long, default_value = "")]
    pub tag: String,
    #[arg(long)]
    pub corpus_id: Option<String>,
    #[arg(long, default_value_t = DEFAULT_MIN_TOKENS)]
    pub min_tokens: u64,
    #[command(flatten)]
    pub source_args: SourceArgs,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Corpus file (.jsonl) or a source tree to ingest.
    pub corpus: PathBuf,
    /// Query file (.jsonl) or a source tree; may equal the corpus.
    pub query: PathBuf,
    #[command(flatten)]
    pub detect: DetectArgs,
    #[command(flatten)]
    pub source_args: SourceArgs,
    /// License compatibility matrix file.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Index store directory for warm starts.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Write report.html and report.json here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("role").required(true).args(["apprentice", "manager"])))]
pub struct ServeArgs {
    #[arg(long)]
    pub apprentice: bool,
    #[arg(long)]
    pub manager: bool,
    #[arg(long, default_value = "127.0.0.1:7070")]
    pub bind: SocketAddr,
    /// Apprentice id; defaults to one derived from the bound address.
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Corpus file an apprentice loads at startup.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub detect: DetectArgs,
    /// Manager data directory.
    #[arg(long, default_value = "cloneguard-data")]
    pub data_dir: PathBuf,
    /// Query blocks per apprentice request.
    #[arg(long, default_value_t = cloneguard_service::DEFAULT_CHUNK_SIZE)]
    pub chunk_size: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub corpus: PathBuf,
    pub query: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Index store used for warm runs; a temporary one by default.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[command(flatten)]
    pub detect: DetectArgs,
    #[command(flatten)]
    pub source_args: SourceArgs,
    #[arg(long)]
    pub matrix: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Report JSON file.
    pub report: PathBuf,
    #[arg(long, default_value_t = 63)]
    pub n: usize,
    #[arg(long, value_enum)]
    pub size_class: Option<SizeClassArg>,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AttributionArgs {
    /// Corpus file whose post text is scanned.
    pub corpus: PathBuf,
    #[arg(long = "pattern", required = true)]
    pub patterns: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PushArgs {
    pub corpus: PathBuf,
    #[arg(long)]
    pub apprentice: String,
    #[command(flatten)]
    pub detect: DetectArgs,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub manager: String,
    /// Apprentice base URL.
    pub apprentice: String,
}

#[derive(Debug, Args)]
pub struct DispatchArgs {
    /// Query file (.jsonl) or source tree.
    pub query: PathBuf,
    #[arg(long)]
    pub manager: String,
    #[command(flatten)]
    pub detect: DetectArgs,
    #[command(flatten)]
    pub source_args: SourceArgs,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}
