use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod server;

#[derive(Debug, Parser)]
#[command(name = "vulnscan", version, about = "Bytecode vulnerability classifier: corpus tools, training and serving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the normalized token stream of a hex bytecode file.
    Preprocess {
        hexfile: PathBuf,
    },
    /// Generate a synthetic motif corpus.
    Synth(SynthArgs),
    /// Label bytecodes by arbitrating detector reports.
    Label(LabelArgs),
    /// Split a corpus and write training chunks plus validation and test files.
    Chunk(ChunkArgs),
    /// Train a model from scratch on a corpus.
    Train(TrainArgs),
    /// Add branches for new classes to a trained model, training only those.
    Transfer(TransferArgs),
    /// Score a model on a labeled corpus and write the metrics report.
    Eval(EvalArgs),
    /// Run the HTTP prediction service.
    Serve(ServeArgs),
    /// Predict one hex bytecode file and print the response document.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 250)]
    per_class: usize,
    #[arg(long, default_value_t = 250)]
    clean: usize,
    #[arg(long, default_value_t = 24)]
    min_len: usize,
    #[arg(long, default_value_t = 96)]
    max_len: usize,
    #[arg(long, default_value_t = 0.15)]
    extra_label_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct LabelArgs {
    /// `tool,class_id,f1`
    #[arg(long)]
    profiles: PathBuf,
    /// `tool,address,class_id,verdict`
    #[arg(long)]
    reports: PathBuf,
    /// `address,bytecode` with raw hex bytecode
    #[arg(long)]
    bytecodes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of classes, taken from the front of the default catalog.
    #[arg(long, default_value_t = 8)]
    classes: usize,
    /// Balance the corpus: positives drawn per class.
    #[arg(long, requires = "clean_count")]
    per_class_min: Option<usize>,
    /// Balance the corpus: clean records drawn.
    #[arg(long, requires = "per_class_min")]
    clean_count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ChunkArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = vulnscan::corpus::DEFAULT_CHUNK_SIZE)]
    chunk_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct Hyper {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = vulnscan::corpus::DEFAULT_CHUNK_SIZE)]
    pub chunk_size: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub global_epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub local_epochs: usize,
    #[arg(long, default_value_t = vulnscan::tokenizer::DEFAULT_MAX_SEQUENCE_LENGTH)]
    pub max_seq_len: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

impl Hyper {
    pub fn train_config(&self) -> vulnscan::TrainConfig {
        vulnscan::TrainConfig {
            global_epochs: self.global_epochs,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            seed: self.seed,
            threshold: self.threshold,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Receives model.bin, vocab.tsv, history.csv, validation.csv and test.csv.
    #[arg(long)]
    model_dir: PathBuf,
    #[command(flatten)]
    hyper: Hyper,
    #[arg(long, default_value_t = 8)]
    embedding_dim: usize,
    #[arg(long, default_value_t = vulnscan::mol_net::DEFAULT_GRU_HIDDEN)]
    gru_hidden: usize,
    #[arg(long, default_value_t = vulnscan::mol_net::DEFAULT_DROPOUT)]
    dropout: f64,
}

#[derive(Debug, Args)]
struct TransferArgs {
    /// Directory holding the trained model and its vocabulary.
    #[arg(long)]
    model_dir: PathBuf,
    /// Corpus whose class columns extend the model's classes.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model_dir: PathBuf,
    /// Labeled corpus; defaults to the model directory's test.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    model_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
}

#[derive(Debug, Args)]
struct PredictArgs {
    hexfile: PathBuf,
    #[arg(long)]
    model_dir: PathBuf,
    /// Print full-precision probabilities.
    #[arg(long)]
    raw: bool,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Preprocess { hexfile } => commands::preprocess(&hexfile),
        Command::Synth(a) => commands::synth(
            &a.out,
            a.classes,
            a.per_class,
            a.clean,
            (a.min_len, a.max_len),
            a.extra_label_rate,
            a.seed,
        ),
        Command::Label(a) => commands::label(
            &a.profiles,
            &a.reports,
            &a.bytecodes,
            &a.out,
            a.classes,
            a.per_class_min.zip(a.clean_count),
            a.seed,
        ),
        Command::Chunk(a) => commands::chunk(&a.corpus, &a.out_dir, a.chunk_size, a.seed),
        Command::Train(a) => commands::train(&a.corpus, &a.model_dir, &a.hyper, a.embedding_dim, a.gru_hidden, a.dropout),
        Command::Transfer(a) => commands::transfer(&a.model_dir, &a.corpus, &a.out_dir, &a.hyper),
        Command::Eval(a) => commands::eval(&a.model_dir, a.data.as_deref(), &a.out, a.threshold),
        Command::Serve(a) => server::serve(&a.model_dir, &a.bind),
        Command::Predict(a) => commands::predict(&a.hexfile, &a.model_dir, a.raw),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
