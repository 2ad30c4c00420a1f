//! Command-line front end: corpus preparation, training, rescoring,
//! evaluation and synthetic data.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctxrescore::{CellKind, Error, TagKind};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "ctxrescore", version, about = "Context-aware lattice rescoring")]
pub struct Cli {
    /// TOML run configuration; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice [default: 42 for synth, 7 for train]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads [default: available parallelism]; 1 runs serially
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build concatenated training text and a vocabulary from dialogue JSONL
    Textprep(TextprepArgs),
    /// Train a recurrent language model on prepared text
    Train(TrainArgs),
    /// Rescore first-pass lattices, optionally with cross-utterance context
    Rescore(RescoreArgs),
    /// Score hypothesis files or run the full experiment grid
    Eval(EvalArgs),
    /// Generate a synthetic conversational corpus with lattices
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TextprepArgs {
    /// Dialogue JSONL input
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for text.txt (and vocab.txt unless --vocab is given)
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Existing vocabulary to reuse instead of building one
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Utterances per training sequence [default: 4]
    #[arg(long)]
    pub k: Option<usize>,
    /// Junction tag: none, sp, sid or int [default: sp]
    #[arg(long)]
    pub tag: Option<TagKind>,
    /// Window layout: cyclic or blocks [default: cyclic]
    #[arg(long, value_parser = commands::parse_enum::<ctxrescore::textprep::WindowMode>)]
    pub mode: Option<ctxrescore::textprep::WindowMode>,
    /// Speaker used for SID tags: earlier or later [default: earlier]
    #[arg(long, value_parser = commands::parse_enum::<ctxrescore::textprep::SidSide>)]
    pub sid_side: Option<ctxrescore::textprep::SidSide>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training text, one token sequence per line
    #[arg(long)]
    pub text: PathBuf,
    /// Vocabulary file
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Output model file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Held-out text for per-epoch perplexity
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Perplexity log (JSON) [default: <out>.log.json]
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Embedding size [default: 32]
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Hidden units per layer [default: 64]
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Recurrent layers [default: 1]
    #[arg(long)]
    pub layers: Option<usize>,
    /// Cell type: simple or gated [default: gated]
    #[arg(long, value_parser = commands::parse_enum::<CellKind>)]
    pub cell: Option<CellKind>,
    /// Truncated back-propagation length [default: 20]
    #[arg(long)]
    pub bptt: Option<usize>,
    /// SGD learning rate [default: 0.5]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Learning-rate factor applied after each epoch [default: 1.0]
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Training epochs [default: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct SearchArgs {
    /// History length kept by approximate modes [default: 4]
    #[arg(long)]
    pub n: Option<usize>,
    /// Pruning beam [default: 15]
    #[arg(long)]
    pub beam: Option<f64>,
    /// Weight on graph-side costs [default: 1.0]
    #[arg(long)]
    pub lm_scale: Option<f64>,
    /// Composition mode: pruned, approx or exact [default: pruned]
    #[arg(long)]
    pub mode: Option<String>,
    /// Maximum composed states per lattice [default: 100000]
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RescoreArgs {
    /// Conversation JSONL whose records carry lattice_path
    #[arg(long)]
    pub conversations: Option<PathBuf>,
    /// Directory lattice paths are relative to [default: the conversations file's directory]
    #[arg(long)]
    pub lattice_dir: Option<PathBuf>,
    /// Vocabulary file
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// First-pass ARPA model whose scores are removed
    #[arg(long)]
    pub first_pass: Option<PathBuf>,
    /// Rescoring model: an RNN model file, or an ARPA file ending in .arpa
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output hypotheses (JSONL)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Junction tag for context; none disables concatenation [default: none]
    #[arg(long)]
    pub tag: Option<TagKind>,
    /// Concatenate only when similarity exceeds this [default: none, always]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Previous utterances to chain [default: 1]
    #[arg(long)]
    pub depth: Option<usize>,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reference conversation JSONL
    #[arg(long)]
    pub conversations: Option<PathBuf>,
    /// Hypothesis files to score, as PATH or NAME=PATH
    #[arg(long = "hyps")]
    pub hyps: Vec<String>,
    /// Grid models as NAME=TAG:PATH (tag none, sp, sid or int)
    #[arg(long = "model")]
    pub models: Vec<String>,
    /// Directory lattice paths are relative to [default: the conversations file's directory]
    #[arg(long)]
    pub lattice_dir: Option<PathBuf>,
    /// Vocabulary file
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// First-pass ARPA model
    #[arg(long)]
    pub first_pass: Option<PathBuf>,
    /// Similarity thresholds swept by the grid [default: 0.0,0.1,0.3,0.5,0.9]
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Previous utterances to chain [default: 1]
    #[arg(long)]
    pub depth: Option<usize>,
    /// Report directory
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Training dialogues [default: 300]
    #[arg(long)]
    pub train: Option<usize>,
    /// Development dialogues [default: 40]
    #[arg(long)]
    pub dev: Option<usize>,
    /// Test dialogues [default: 60]
    #[arg(long)]
    pub test: Option<usize>,
    /// Chance a later utterance repeats an entity [default: 0.6]
    #[arg(long)]
    pub repeat_prob: Option<f64>,
}

fn run(cli: Cli) -> ctxrescore::Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let jobs = cli.jobs.or(cfg.jobs);
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let seed = cli.seed.or(cfg.seed);
    match cli.command {
        Command::Textprep(a) => commands::textprep(a, &cfg),
        Command::Train(a) => commands::train(a, &cfg, seed),
        Command::Rescore(a) => commands::rescore(a, &cfg),
        Command::Eval(a) => commands::eval(a, &cfg),
        Command::Synth(a) => commands::synth(a, &cfg, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                    ExitCode::from(2)
                } else {
                    ExitCode::SUCCESS
                };
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[UsageError]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::FAILURE
        }
    }
}
