// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "rtloc", version, about = "Locate the RTL blocks a change request affects")]
#[command(arg_required_else_help = true, propagate_version = true)]
pub struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment sources into assign/always blocks (JSONL).
    Blocks(SourceArgs),
    /// Per-block data-flow graphs (JSONL).
    Dfg(DfgArgs),
    /// Design-wide topology graph over blocks (JSON).
    Dtg(SourceArgs),
    /// Replace user identifiers with positional placeholders.
    Anonymize(SourceArgs),
    /// Mine change instances from a git history.
    Mine(MineArgs),
    /// IP-disjoint train/validation/test split of a dataset (JSON).
    Split(SplitArgs),
    /// Generate a synthetic dataset with planted cue families.
    Synth(SynthArgs),
    /// Train one stage or the whole pipeline.
    Train(TrainArgs),
    /// Embed every block of a snapshot with trained models.
    Index(IndexArgs),
    /// Rank indexed blocks for a change request.
    Query(QueryArgs),
    /// Retrieval metrics on held-out instances.
    Eval(EvalArgs),
    /// Scoring latency and parameter counts.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Source files or directories (searched for .sv, .svh, .v, .vh).
    #[arg(long = "in", value_name = "PATH", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "local")]
    pub snapshot_id: String,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    #[command(flatten)]
    pub src: Inputs,
    /// Output file (directory for `anonymize`); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DfgArgs {
    #[command(flatten)]
    pub src: Inputs,
    /// Buckets for hashed signal names.
    #[arg(long, default_value_t = 4096)]
    pub vocab: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExtractorArg {
    Remote,
    Fallback,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    /// Repository to mine (first-parent history of HEAD).
    #[arg(long)]
    pub repo: PathBuf,
    #[arg(long, value_enum)]
    pub extractor: Option<ExtractorArg>,
    /// Completion endpoint for the remote extractor.
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Use the keyword rules when the endpoint cannot be reached.
    #[arg(long)]
    pub fallback_on_error: bool,
    /// Instances extracted below this confidence are rejected.
    #[arg(long)]
    pub min_confidence: Option<f64>,
    /// Dataset directory to write.
    #[arg(long, required_unless_present = "dump_config")]
    pub out: Option<PathBuf>,
    /// JSON miner configuration; flags win over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub dump_config: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.15, 0.15])]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = 36)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset directory to write.
    #[arg(long, required_unless_present = "dump_config")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub designs: Option<usize>,
    #[arg(long)]
    pub blocks_per_design: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON generator configuration; flags win over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dump_config: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Text,
    Local,
    Glide,
    Router,
    All,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long, required_unless_present = "dump_config")]
    pub data: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long, required_unless_present = "dump_config")]
    pub models: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub stage: StageArg,
    /// JSON training configuration; flags win over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dump_config: bool,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long = "in", value_name = "PATH", num_args = 1.., conflicts_with = "data", required_unless_present = "data")]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "local")]
    pub snapshot_id: String,
    /// Dataset directory; indexes the snapshot named by --snapshot.
    #[arg(long, requires = "snapshot")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub snapshot: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub models: PathBuf,
    /// Index written by `index`.
    #[arg(long)]
    pub index: PathBuf,
    /// Change request text.
    #[arg(long = "q", value_name = "TEXT")]
    pub query: String,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitPart {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory; with --seeds, the parent of `seed-<n>` directories.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitPart,
    /// Only instances of this cue family.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, value_delimiter = ',', default_values = ["fused", "text", "local", "glide", "bm25"])]
    pub methods: Vec<String>,
    /// Average over the models trained with these seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Also score against anonymized snapshots and report the drop.
    #[arg(long)]
    pub masked: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Checkpoint directory; freshly initialized models when absent.
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Dataset supplying candidates and queries; synthetic when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub candidates: usize,
    #[arg(long, default_value_t = 50)]
    pub queries: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
