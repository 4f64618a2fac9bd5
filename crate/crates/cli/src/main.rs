//! `d2t`: ingest, linearize, tokenize, train, decode and score data-to-text
//! corpora from the command line.

mod commands;
mod data;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use data::Usage;

#[derive(Parser, Debug)]
#[command(name = "d2t", version, about = "Data-to-text toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a WebNLG, MultiWoz or ToTTo JSONL file and write its canonical form.
    Ingest(IngestArgs),
    /// Write the flat source strings a model is trained on.
    Linearize(LinearizeArgs),
    /// Learn a BPE vocabulary from datasets and plain-text files.
    TrainTokenizer(TrainTokenizerArgs),
    /// Span-corruption pretraining on plain text.
    Pretrain(PretrainArgs),
    /// Fine-tune on a dataset, keeping the checkpoint with the best dev BLEU.
    Finetune(FinetuneArgs),
    /// Decode a dataset with a checkpoint.
    Predict(PredictArgs),
    /// Score predictions against a dataset.
    Evaluate(EvaluateArgs),
    /// Combine evaluation reports into one table.
    Report(ReportArgs),
    /// Generate a synthetic triple-to-text dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// Worker cap. Computation is single-threaded, so any value >= 1 is accepted.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct LinArgs {
    /// Omit the "translate <Kind> to text:" prefix.
    #[arg(long)]
    pub no_task_prefix: bool,
    #[arg(long)]
    pub lowercase: bool,
}

impl LinArgs {
    pub fn config(&self) -> d2t_core::linearize::LinearizationConfig {
        d2t_core::linearize::LinearizationConfig { include_task_prefix: !self.no_task_prefix, lowercase: self.lowercase }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Auto,
    Webnlg,
    Multiwoz,
    Totto,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct IngestArgs {
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    pub format: FormatArg,
    #[arg(long)]
    pub input: PathBuf,
    /// Fail (exit 1) if any line is rejected.
    #[arg(long)]
    pub strict: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LinFormat {
    Tsv,
    Jsonl,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LinMode {
    /// one row per reference
    Train,
    /// one row per example, all references attached
    Eval,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct LinearizeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = LinFormat::Jsonl)]
    pub format: LinFormat,
    #[arg(long, value_enum, default_value_t = LinMode::Eval)]
    pub mode: LinMode,
    #[command(flatten)]
    pub lin: LinArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainTokenizerArgs {
    /// Dataset whose linearized sources and references join the corpus.
    #[arg(long)]
    pub dataset: Vec<PathBuf>,
    /// Plain-text file, one document per line.
    #[arg(long)]
    pub text: Vec<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub vocab_size: usize,
    #[command(flatten)]
    pub lin: LinArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeArg {
    Tiny,
    Small,
    Base,
}

impl From<SizeArg> for d2t_core::seq2seq::SizeTag {
    fn from(s: SizeArg) -> Self {
        match s {
            SizeArg::Tiny => Self::Tiny,
            SizeArg::Small => Self::Small,
            SizeArg::Base => Self::Base,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptArg {
    Adam,
    Sgd,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = d2t_core::train::DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = OptArg::Adam)]
    pub optimizer: OptArg,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PretrainArgs {
    /// Plain-text corpus, one document per line.
    #[arg(long, required = true)]
    pub text: Vec<PathBuf>,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, value_enum, default_value_t = SizeArg::Small)]
    pub size: SizeArg,
    /// Longest sequence the model accepts.
    #[arg(long, default_value_t = d2t_core::seq2seq::DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub train_data: PathBuf,
    #[arg(long)]
    pub dev_data: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Model size for a fresh start; ignored with --init.
    #[arg(long, value_enum, default_value_t = SizeArg::Small)]
    pub size: SizeArg,
    #[arg(long, default_value_t = d2t_core::seq2seq::DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long, default_value_t = d2t_core::train::DEFAULT_EVAL_EVERY)]
    pub eval_every: usize,
    /// Decoding cap for dev evaluation.
    #[arg(long)]
    pub dev_max_len: Option<usize>,
    #[command(flatten)]
    pub lin: LinArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Beam width; 1 decodes greedily.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub beam: u32,
    /// Output length cap; defaults to the model's max_len.
    #[arg(long)]
    pub max_len: Option<usize>,
    #[command(flatten)]
    pub lin: LinArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Comma-separated: bleu, parent, ser, meteor.
    #[arg(long, default_value = "bleu")]
    pub metrics: String,
    /// Row label in the report.
    #[arg(long, default_value = "system")]
    pub system: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReportArgs {
    /// Report JSON written by `evaluate` or `report`.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 100)]
    pub n_dev: usize,
    #[arg(long, default_value_t = 100)]
    pub n_test: usize,
    #[arg(long, default_value_t = 60)]
    pub n_entities: usize,
    #[arg(long, default_value_t = 10)]
    pub n_relations: usize,
    #[arg(long, default_value_t = 2)]
    pub holdout_relations: usize,
    #[arg(long, default_value_t = 0.5)]
    pub unseen_fraction: f64,
    #[arg(long, default_value_t = 2)]
    pub max_triples: usize,
    /// Also write this many unlabelled documents to text.txt.
    #[arg(long, default_value_t = 0)]
    pub text_docs: usize,
    #[command(flatten)]
    pub common: Common,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use d2t_core::Error as E;
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::NonFinite(_) | E::Diverged { .. } | E::SentinelExhaustion(_) => 2,
                _ => 1,
            };
        }
    }
    2
}

/// The lines of a clap error up to its first blank line, joined.
fn one_line(err: &clap::Error) -> String {
    let text = err.render().to_string();
    text.lines().take_while(|l| !l.trim().is_empty()).map(str::trim).collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", one_line(&e));
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Linearize(a) => commands::linearize(&a),
        Command::TrainTokenizer(a) => commands::train_tokenizer(&a),
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Finetune(a) => commands::finetune(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Report(a) => commands::report(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let label = if code == 1 { "error" } else { "internal error" };
            eprintln!("{label}: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(code)
        }
    }
}
