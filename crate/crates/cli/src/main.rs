mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qemb_core::embed::Channel;
use qemb_core::fusion::DualMode;
use qemb_core::Error;

#[derive(Parser)]
#[command(
    name = "qemb",
    version,
    about = "Quantum-inspired text embedding workbench"
)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// JSON or TOML file with `pipeline`, `axes`, `fusion` and `mlp` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus, queries, pairs and teacher fixtures.
    Fixtures(FixturesArgs),
    /// Tokenize and segment a JSONL corpus.
    Ingest(IngestArgs),
    /// Build semantic axes from a segmented corpus.
    BuildAxes(BuildAxesArgs),
    /// Embed every sub-chunk of a segmented corpus.
    Embed(EmbedArgs),
    /// Build the document-level BM25 index.
    IndexBm25(IndexBm25Args),
    /// Validate embeddings and write the dense index.
    IndexVec(IndexVecArgs),
    /// Run hybrid retrieval for a query file.
    Search(SearchArgs),
    /// Score a run file against the query judgments.
    Eval(EvalArgs),
    /// Compare pairwise cosine similarities with reference scores.
    DiagPairwise(DiagPairwiseArgs),
    /// Fit a projection head from student to teacher embeddings.
    Distill(DistillArgs),
    /// Fidelity kernel over PCA-projected embeddings.
    Kernel(KernelArgs),
}

#[derive(Args)]
pub struct FixturesArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = qemb_core::fixtures::FIXTURE_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub identity_pairs: usize,
    #[arg(long, default_value_t = 64)]
    pub identity_dim: usize,
}

#[derive(Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BuildAxesArgs {
    #[arg(long)]
    pub segmented: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ChannelArg {
    Current,
    Amp,
}

impl From<ChannelArg> for Channel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Current => Channel::Current,
            ChannelArg::Amp => Channel::Amp,
        }
    }
}

/// Angle and channel choices shared by the commands that run the encoder.
#[derive(Args)]
pub struct EncoderArgs {
    /// Semantic axes file; required unless `--lexical`.
    #[arg(long)]
    pub axes: Option<PathBuf>,
    /// Use lexical angles instead of semantic axes.
    #[arg(long)]
    pub lexical: bool,
    #[arg(long, value_enum)]
    pub channel: Option<ChannelArg>,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub segmented: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderArgs,
}

#[derive(Args)]
pub struct IndexBm25Args {
    #[arg(long)]
    pub segmented: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct IndexVecArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DualArg {
    Off,
    DualScore,
    Rrf,
}

impl From<DualArg> for DualMode {
    fn from(d: DualArg) -> Self {
        match d {
            DualArg::Off => DualMode::Off,
            DualArg::DualScore => DualMode::DualScore,
            DualArg::Rrf => DualMode::Rrf,
        }
    }
}

#[derive(Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub bm25: PathBuf,
    /// Current-channel index written by `index-vec`.
    #[arg(long)]
    pub vectors: PathBuf,
    /// Amp-channel index, needed by `--dual`.
    #[arg(long)]
    pub amp_vectors: Option<PathBuf>,
    #[arg(long)]
    pub axes: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Interpolation weight on the embedding score.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Gate α by the BM25 top-2 margin.
    #[arg(long)]
    pub dynamic: bool,
    /// Also rank at every grid α and write the α-oracle summary.
    #[arg(long)]
    pub alpha_sweep: bool,
    /// Cross-encoder scores, `qid \t unit \t score`.
    #[arg(long)]
    pub ce: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dual: Option<DualArg>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DiagPairwiseArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Precomputed embeddings with ids `pairNNN:a` / `pairNNN:b`. When absent
    /// the sentences are encoded.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[command(flatten)]
    pub encoder: EncoderArgs,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum HeadArg {
    Linear,
    Mlp,
}

#[derive(Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub student: PathBuf,
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "linear")]
    pub head: HeadArg,
    /// Ridge penalty for the linear head.
    #[arg(long, default_value_t = qemb_core::distill::DEFAULT_RIDGE)]
    pub lambda: f64,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Id pairs sampled for the alignment report.
    #[arg(long, default_value_t = 1000)]
    pub align_pairs: usize,
}

#[derive(Args)]
pub struct KernelArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub n_qubits: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    /// Use only the first N embeddings (by id).
    #[arg(long)]
    pub limit: Option<usize>,
    /// Embeddings whose cosines serve as the reference similarity; defaults
    /// to the input embeddings.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

fn envelope(code: &str, message: &str) -> String {
    serde_json::json!({ "error": { "code": code, "message": message } }).to_string()
}

fn run(cli: Cli) -> qemb_core::Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    let cfg = config::FileConfig::load(cli.config.as_deref())?;
    let cfg_path = cli.config.as_deref();
    match cli.command {
        Command::Fixtures(a) => commands::fixtures(&a),
        Command::Ingest(a) => commands::ingest(&a, &cfg, cfg_path),
        Command::BuildAxes(a) => commands::build_axes(&a, &cfg, cfg_path),
        Command::Embed(a) => commands::embed(&a, &cfg, cfg_path),
        Command::IndexBm25(a) => commands::index_bm25(&a),
        Command::IndexVec(a) => commands::index_vec(&a),
        Command::Search(a) => commands::search(&a, &cfg, cfg_path),
        Command::Eval(a) => commands::eval(&a),
        Command::DiagPairwise(a) => commands::diag_pairwise(&a, &cfg, cfg_path),
        Command::Distill(a) => commands::distill(&a, &cfg, cfg_path),
        Command::Kernel(a) => commands::kernel(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", envelope("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", envelope(e.code(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
