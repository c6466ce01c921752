mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rcdst::models::ModelKind;

#[derive(Debug, Parser)]
#[command(name = "rcdst", version, about = "Dialog state tracking as reading comprehension")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and write `<kind>.ckpt` and `<kind>.log.jsonl`.
    Train(TrainArgs),
    /// Track every dialog of a corpus with one set of checkpoints.
    Predict(PredictArgs),
    /// Track with several checkpoint sets, averaging their probabilities.
    Ensemble(EnsembleArgs),
    /// Score a prediction file against a gold corpus.
    Eval(EvalArgs),
    /// Run the oracle and embedding ablation grid.
    Ablate(AblateArgs),
    /// Depth breakdown, error categories and derivability coverage.
    Analyze(AnalyzeArgs),
    /// Per-slot hybrid of reading-comprehension and closed-vocabulary
    /// predictions, chosen by development accuracy.
    Combine(CombineArgs),
    /// Check a corpus against its schema and print statistics.
    ValidateCorpus(ValidateArgs),
    /// Write the bundled synthetic corpus, schema, ontology and embeddings.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
struct DataArgs {
    /// Slot schema: a JSON object with a `slots` list of names.
    #[arg(long)]
    schema: PathBuf,
    /// Precomputed per-passage embeddings; enables frozen-embedding mode.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Carryover,
    Type,
    Span,
    Jst,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Carryover => ModelKind::Carryover,
            KindArg::Type => ModelKind::Type,
            KindArg::Span => ModelKind::Span,
            KindArg::Jst => ModelKind::Jst,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
enum SystemArg {
    /// Carryover, type and span models.
    #[default]
    Rc,
    /// Closed-vocabulary classifier.
    Jst,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: KindArg,
    #[arg(long)]
    train: PathBuf,
    /// Development corpus for early stopping; without it the training loss
    /// is monitored.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Slot values for the closed-vocabulary model; defaults to the values
    /// seen in training.
    #[arg(long)]
    ontology: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
}

#[derive(Debug, Clone, Args)]
struct TrackArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t)]
    system: SystemArg,
    /// Comma-separated stages replaced by gold: carryover, type, span, all.
    #[arg(long, default_value = "")]
    oracle: String,
    /// Change probability at or above which a slot is updated.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    max_span_len: Option<usize>,
    /// Use the gold previous state at every turn.
    #[arg(long)]
    gold_previous_state: bool,
    /// Prediction file (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Directory holding the checkpoints.
    #[arg(long)]
    models: PathBuf,
    #[command(flatten)]
    track: TrackArgs,
}

#[derive(Debug, Args)]
struct EnsembleArgs {
    /// Checkpoint directories; repeat for each member.
    #[arg(long = "models", required = true, num_args = 1..)]
    models: Vec<PathBuf>,
    #[command(flatten)]
    track: TrackArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Checkpoints of the full system.
    #[arg(long)]
    models: PathBuf,
    /// Checkpoints trained with trainable embeddings, for the row without
    /// pretrained embeddings.
    #[arg(long)]
    baseline_models: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Restrict the oracle rows to these stages (comma-separated).
    #[arg(long)]
    oracle: Option<String>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CombineArgs {
    /// Reading-comprehension predictions to combine.
    #[arg(long)]
    rc: PathBuf,
    /// Closed-vocabulary predictions to combine.
    #[arg(long)]
    jst: PathBuf,
    /// Reading-comprehension predictions on the development corpus.
    #[arg(long)]
    rc_dev: PathBuf,
    /// Closed-vocabulary predictions on the development corpus.
    #[arg(long)]
    jst_dev: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    ontology: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
