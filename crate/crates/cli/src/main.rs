mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] densefold::Error),
    /// Some inputs were unreadable; outputs for the rest were still written.
    #[error("{skipped} of {total} inputs could not be read")]
    Skipped { skipped: usize, total: usize },
}

impl CliError {
    /// 1 usage or configuration, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> u8 {
        use densefold::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::Config(_)) => 1,
            CliError::Core(E::Diverged { .. } | E::NonFinite(_)) => 3,
            CliError::Core(_) | CliError::Skipped { .. } => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "densefold",
    version,
    about = "Train and evaluate a densely connected CNN on handwritten numerals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode, prepare and pack a labelled image set.
    Preprocess(PreprocessArgs),
    /// Train from scratch on a packed dataset.
    Train(TrainArgs),
    /// Score a checkpoint on a packed dataset and write a report.
    Eval(EvalArgs),
    /// Classify individual image files.
    Predict(PredictArgs),
    /// Draw metric columns of a CSV as an SVG line chart.
    Plot(PlotArgs),
}

#[derive(Args)]
pub struct PreprocessArgs {
    /// Directory with one subdirectory per class (`0` .. `9`); scanned when
    /// the manifest does not exist yet.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// `path,label` CSV. Read if it exists, otherwise written from the scan.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Packed output; normalization and counts go to `<out>.meta`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = ["train", "test"])]
    pub split: String,
    /// Sidecar of the training split whose normalization a test split reuses.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Seed of the cross-validation fold partition, stored in the sidecar.
    #[arg(long, default_value_t = 1)]
    pub fold_seed: u64,
}

/// Field names double as config keys; see `config::KEYS`.
#[derive(Args)]
pub struct TrainArgs {
    /// Packed training set (with its `.meta` sidecar).
    #[arg(long, required_unless_present = "print_config")]
    pub data: Option<PathBuf>,
    /// `key=value` file; flags given on the command line override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for metrics and checkpoints.
    #[arg(long, required_unless_present = "print_config")]
    pub out: Option<PathBuf>,
    /// Packed test set scored after every epoch into `test_metrics.csv`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub print_config: bool,

    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.009)]
    pub eta0: f64,
    /// Last epoch at the initial learning rate.
    #[arg(long, default_value_t = 80)]
    pub lr_drop_epoch: usize,
    #[arg(long, default_value_t = 0.15)]
    pub lr_drop_factor: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum_mu: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub weight_decay_lambda: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_train: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_test: usize,
    #[arg(long, default_value = "cross_entropy", value_parser = ["cross_entropy", "mse"])]
    pub loss_kind: String,
    #[arg(long, default_value_t = 40)]
    pub depth_n: usize,
    #[arg(long, default_value_t = 12)]
    pub growth_k: usize,
    #[arg(long, default_value_t = 0.5)]
    pub compression_theta: f64,
    #[arg(long, default_value_t = 0.09)]
    pub dropout_p: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub bn_eps: f64,
    #[arg(long, default_value_t = 0.1)]
    pub bn_momentum: f64,
    #[arg(
        long,
        default_value = "centered_uniform",
        value_parser = ["centered_uniform", "scaled_uniform", "unit_uniform"]
    )]
    pub init: String,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub augment: bool,
    #[arg(long, default_value = "1,0.2,0.3,0.5,0.6,0.7,0.8,0.9,1.3,1.5")]
    pub contrast_factors: String,
    #[arg(long, default_value_t = 15.0)]
    pub rotation_deg: f64,
    #[arg(long, default_value_t = 0.091)]
    pub zoom_max: f64,
    /// Root seed of every random stream.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Fold partition seed; defaults to the one stored with the data.
    #[arg(long, default_value_t = 1)]
    pub fold_seed: u64,
    /// Cross-validation folds; below 2 disables validation.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 10)]
    pub checkpoint_every: usize,
    /// Log measured epoch durations (makes metrics files differ between runs).
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    pub record_wall_time: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory for `confusion.csv`, `summary.txt` and `misclassified.csv`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PGM, PPM or single-sample packed files.
    #[arg(long = "image", required = true, num_args = 1..)]
    pub images: Vec<PathBuf>,
}

#[derive(Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated column names, plotted against `epoch`.
    #[arg(long, default_value = "train_loss")]
    pub series: String,
}

/// Config keys whose flags were typed on the command line, with raw values.
fn flag_overrides(m: &ArgMatches) -> Vec<(String, String)> {
    config::KEYS
        .iter()
        .filter(|k| m.value_source(k) == Some(clap::parser::ValueSource::CommandLine))
        .filter_map(|k| {
            let raw = m.get_raw(k)?.next_back()?.to_string_lossy().into_owned();
            Some((k.to_string(), raw))
        })
        .collect()
}

fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("DENSEFOLD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "DENSEFOLD_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn run(matches: &ArgMatches) -> CliResult<()> {
    init_threads()?;
    let cli = Cli::from_arg_matches(matches).map_err(|e| CliError::Usage(e.to_string()))?;
    match cli.command {
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::Train(a) => {
            let sub = matches
                .subcommand_matches("train")
                .expect("train subcommand");
            commands::train(&a, &flag_overrides(sub))
        }
        Command::Eval(a) => commands::eval(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Plot(a) => plot::run(&a),
    }
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
