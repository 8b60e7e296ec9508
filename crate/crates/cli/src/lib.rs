//! Command-line pipeline: preprocessing, training, inference and
//! evaluation from one JSON config. Artifacts live under `--out` with the
//! fixed names in [`files`].

mod commands;
mod error;
mod store;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use patchrep::fusion::AblationFlags;

pub use crate::error::CliError;
pub use crate::store::files;

#[derive(Debug, Parser)]
#[command(name = "patchrep", version, about = "Patch representation learning pipeline")]
pub struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// JSON config with data, model, gcn, train and decode sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub no_seq_intention: bool,
    #[arg(long, global = true)]
    pub no_graph_intention: bool,
}

impl Global {
    pub fn flags(&self) -> AblationFlags {
        AblationFlags {
            use_seq_intention: !self.no_seq_intention,
            use_graph_intention: !self.no_graph_intention,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Input {
    /// Raw JSON-lines records to run on instead of the preprocessed
    /// training set.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint stem (`<stem>.json` + `<stem>.bin`) instead of the
    /// command's default.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse the configured corpora; writes the preprocessed patches and a report.
    Preprocess,
    /// Learn the BPE vocabulary from preprocessed code.
    BuildVocab,
    /// Merge the pruned training ASTs into the static graph.
    BuildStaticGraph,
    /// Masked-token pre-training of encoder and decoder.
    Pretrain,
    /// Fine-tune message generation, starting from the pre-trained weights.
    FinetuneDesc,
    /// Fine-tune the correctness classifier, starting from the pre-trained weights.
    FinetuneCorrectness,
    /// Export pooled patch embeddings.
    Embed(Input),
    /// Generate a message for every patch.
    Generate(Input),
    /// Probability that each patch is correct.
    Classify(Input),
    /// Nearest training patch by cosine similarity; predicts its message.
    Retrieve(Input),
    /// Score predictions against references.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// `{"id","prediction"}` lines; defaults to the generated predictions.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// `{"id","msg"}` lines; defaults to the configured generation data.
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// `{"id","probability"}` lines; scored against the configured
    /// correctness labels when present.
    #[arg(long)]
    pub classifications: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match cli.cmd {
        Command::Preprocess => commands::preprocess(g),
        Command::BuildVocab => commands::build_vocab(g),
        Command::BuildStaticGraph => commands::build_static_graph(g),
        Command::Pretrain => commands::pretrain(g),
        Command::FinetuneDesc => commands::finetune_desc(g),
        Command::FinetuneCorrectness => commands::finetune_correctness(g),
        Command::Embed(i) => commands::embed(g, &i),
        Command::Generate(i) => commands::generate(g, &i),
        Command::Classify(i) => commands::classify(g, &i),
        Command::Retrieve(i) => commands::retrieve(g, &i),
        Command::Eval(a) => commands::eval(g, &a),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
    run(cli)
}
