//! Command-line front end.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::codec::LetterSets;
use crate::corpus::{self, load_corpus, load_documents, CorpusError, Split, Vocabulary};
use crate::dotter::Dotter;
use crate::exec::Exec;
use crate::gradcheck;
use crate::metrics::{self, MetricsError};
use crate::network::{ModelConfig, NetworkError};
use crate::trainer::{self, Corpora, TrainError, TrainPlan};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "niqqud", version, about = "Hebrew diacritization tagger")]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Add diacritics to text.
    Dot {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "-")]
        input: String,
        #[arg(long, default_value = "-")]
        output: String,
    },
    /// Score predictions against a gold directory.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        pred: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Append raw numerators and denominators.
        #[arg(long)]
        counts: bool,
    },
    /// Per-split document, token and character counts.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        dims: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory with premodern/, modern/ and optionally validation/.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `key = value` file with plan and model settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    premodern_epochs: Option<usize>,
    #[arg(long)]
    modern_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    dropout: Option<f32>,
    #[arg(long)]
    residual: bool,
    #[arg(long)]
    max_grad_norm: Option<f64>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Checkpoint(String),
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Checkpoint(_) => EXIT_CHECKPOINT,
            CliError::Failed(_) => EXIT_FAILURE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Checkpoint(m) | CliError::Failed(m) => m,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn checkpoint_error(path: &Path, e: NetworkError) -> CliError {
    CliError::Checkpoint(format!("{}: {e}", path.display()))
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidPlan(_) => CliError::Usage(e.to_string()),
            TrainError::NoData(_) | TrainError::Metrics(_) => CliError::Data(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match dispatch(cli.command, exec) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("niqqud: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, exec: Exec) -> Result<(), CliError> {
    match command {
        Command::Train(args) => cmd_train(args, exec),
        Command::Dot { model, input, output } => cmd_dot(&model, &input, &output, exec),
        Command::Eval {
            gold,
            pred,
            model,
            counts,
        } => cmd_eval(&gold, pred.as_deref(), model.as_deref(), counts, exec),
        Command::Stats { corpus } => cmd_stats(&corpus),
        Command::Gradcheck { dims, seed } => cmd_gradcheck(dims, seed),
    }
}

fn load_split(root: &Path, split: Split, sets: &LetterSets) -> Result<Vec<corpus::Document>, CliError> {
    if root.join(split.dir_name()).is_dir() {
        Ok(load_corpus(root, split, sets)?)
    } else {
        Ok(Vec::new())
    }
}

fn cmd_train(args: TrainArgs, exec: Exec) -> Result<(), CliError> {
    if !args.corpus.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", args.corpus.display())));
    }
    let vocab = Vocabulary::default();
    let mut plan = TrainPlan {
        exec,
        ..TrainPlan::default()
    };
    let mut config = ModelConfig::new(vocab.len());
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        for (key, value) in trainer::parse_key_values(&text)? {
            if !plan.set(&key, &value)? && !set_model_key(&mut config, &key, &value)? {
                return Err(CliError::Usage(format!("{}: unknown key {key}", path.display())));
            }
        }
    }
    plan.seed = args.seed.unwrap_or(plan.seed);
    plan.premodern_epochs = args.premodern_epochs.unwrap_or(plan.premodern_epochs);
    plan.modern_epochs = args.modern_epochs.unwrap_or(plan.modern_epochs);
    plan.batch_size = args.batch_size.unwrap_or(plan.batch_size);
    plan.max_grad_norm = args.max_grad_norm.or(plan.max_grad_norm);
    config.embed_dim = args.embed_dim.unwrap_or(config.embed_dim);
    config.hidden_dim = args.hidden_dim.unwrap_or(config.hidden_dim);
    config.dropout = args.dropout.unwrap_or(config.dropout);
    config.residual |= args.residual;
    plan.validate()?;
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    log::info!("model configuration:\n{}", config.to_text());

    let sets = config.letter_sets.clone();
    let corpora = Corpora {
        premodern: if plan.premodern_epochs > 0 {
            load_split(&args.corpus, Split::PreModern, &sets)?
        } else {
            Vec::new()
        },
        modern: if plan.modern_epochs > 0 {
            load_split(&args.corpus, Split::Modern, &sets)?
        } else {
            Vec::new()
        },
        validation: load_split(&args.corpus, Split::Validation, &sets)?,
    };
    let outcome = trainer::train(&plan, &corpora, &config, &args.out)?;
    log::info!("{} steps, checkpoint {}", outcome.steps, args.out.display());
    if let Some(report) = outcome.validation {
        print!("{}", report.to_tsv(false));
    }
    Ok(())
}

fn set_model_key(config: &mut ModelConfig, key: &str, value: &str) -> Result<bool, CliError> {
    let bad = || CliError::Usage(format!("bad value {value:?} for {key}"));
    match key {
        "embed_dim" => config.embed_dim = value.parse().map_err(|_| bad())?,
        "hidden_dim" => config.hidden_dim = value.parse().map_err(|_| bad())?,
        "dropout" => config.dropout = value.parse().map_err(|_| bad())?,
        "residual" => config.residual = value.parse().map_err(|_| bad())?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn load_dotter(model: &Path, exec: Exec) -> Result<Dotter, CliError> {
    Ok(Dotter::from_checkpoint(model).map_err(|e| checkpoint_error(model, e))?.with_exec(exec))
}

fn cmd_dot(model: &Path, input: &str, output: &str, exec: Exec) -> Result<(), CliError> {
    let dotter = load_dotter(model, exec)?;
    let reader: Box<dyn BufRead> = if input == "-" {
        Box::new(io::stdin().lock())
    } else {
        Box::new(BufReader::new(File::open(input).map_err(|e| CliError::Data(format!("{input}: {e}")))?))
    };
    let writer: Box<dyn Write> = if output == "-" {
        Box::new(io::stdout().lock())
    } else {
        Box::new(BufWriter::new(File::create(output).map_err(|e| CliError::Data(format!("{output}: {e}")))?))
    };
    dotter.dot_stream(reader, writer).map_err(|e| match e {
        NetworkError::Io(io) if io.kind() == io::ErrorKind::InvalidData => CliError::Data(format!("input is not UTF-8: {io}")),
        other => CliError::Failed(other.to_string()),
    })
}

fn cmd_eval(gold: &Path, pred: Option<&Path>, model: Option<&Path>, counts: bool, exec: Exec) -> Result<(), CliError> {
    let sets = LetterSets::default();
    let gold_docs = load_documents(gold, &sets, exec)?;
    let pred_docs = match (pred, model) {
        (Some(dir), _) => load_documents(dir, &sets, exec)?,
        (None, Some(model)) => {
            let d = load_dotter(model, exec)?;
            trainer::predict_documents(&d.config, &d.params, &d.vocab, &gold_docs, exec)
                .map_err(|e| CliError::Failed(e.to_string()))?
        }
        (None, None) => return Err(CliError::Usage("one of --pred or --model is required".into())),
    };
    let report = metrics::evaluate(&gold_docs, &pred_docs, &sets, exec)?;
    print!("{}", report.to_tsv(counts));
    Ok(())
}

fn cmd_stats(root: &Path) -> Result<(), CliError> {
    let sets = LetterSets::default();
    let stats = corpus::corpus_stats(root, &sets)?;
    println!("split\tdocuments\ttokens\tchars\tniqqud\tdagesh\tsin");
    for s in stats {
        println!(
            "{}\t{}\t{}\t{}",
            s.tsv_line(),
            s.decisions.niqqud,
            s.decisions.dagesh,
            s.decisions.sin
        );
    }
    Ok(())
}

fn cmd_gradcheck(dims: usize, seed: u64) -> Result<(), CliError> {
    if dims == 0 {
        return Err(CliError::Usage("--dims must be positive".into()));
    }
    let report = gradcheck::run_default(dims, 0.1, true, seed).map_err(|e| CliError::Failed(e.to_string()))?;
    println!("array\tchecked\tfailures\tmax_rel_err");
    for a in &report.arrays {
        println!("{}\t{}\t{}\t{:.3e}", a.name, a.checked, a.failures, a.max_relative_error);
    }
    if report.passed() {
        println!("ok: {} coordinates within {:.0e}", report.checked(), report.tolerance);
        Ok(())
    } else {
        Err(CliError::Failed("gradient check failed".into()))
    }
}
