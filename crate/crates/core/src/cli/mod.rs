//! Command-line entry point: `train`, `predict`, `evaluate`, `synth` and
//! `augment`.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration or parameter
//! error, 3 dataset error, 4 checkpoint error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::data::Target;
use crate::error::Error;

pub use commands::{
    augment, dequantize_probabilities, evaluate, mask_filename, predict, prepare_training_data,
    probability_filename, quantize_probabilities, read_probability_png, synth, train, EvaluateOutcome,
    TrainOutcome, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, PANEL_DIR, SUMMARY_FILE, TRAIN_LOG_FILE,
};
pub use config::{DataOptions, RunConfig};

pub const THREADS_ENV: &str = "BLASTOSEG_THREADS";

/// Pipeline stage an error surfaced in; decides the exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Data,
    Checkpoint,
    Training,
    Output,
}

#[derive(Debug)]
pub struct CliError {
    pub stage: Stage,
    pub error: Error,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(stage: Stage, error: Error) -> Self {
        CliError { stage, error }
    }

    /// `map_err` adaptor tagging an error with `stage`.
    pub fn at(stage: Stage) -> impl Fn(Error) -> CliError {
        move |error| CliError::new(stage, error)
    }

    pub fn exit_code(&self) -> u8 {
        match (&self.error, self.stage) {
            (Error::Config { .. } | Error::Parameter(_), _) => 2,
            (_, Stage::Config) => 2,
            (_, Stage::Data) => 3,
            (_, Stage::Checkpoint) => 4,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        self.error.source()
    }
}

#[derive(Debug, Parser)]
#[command(name = "blastoseg", version, about = "Residual-dilated U-Net segmentation of blastocyst regions")]
pub struct Cli {
    /// Worker threads (1 forces the single-threaded deterministic mode).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, split, augment and train; writes checkpoint, log and resolved config.
    Train {
        /// JSON run configuration; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        target: Option<Target>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Writes a 16-bit probability map and an 8-bit mask per input image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// An image file or a directory of images.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        /// Run configuration the checkpoint must match.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Scores a checkpoint on its held-out split; writes metrics, summary and panels.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        target: Target,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generates synthetic phantoms in the dataset layout.
    Synth {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes every rotation of a dataset.
    Augment {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        step: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::new(Stage::Config, Error::config("threads", "must be at least 1")));
    }
    // a pool already built by an earlier call in this process is kept
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn run_config(
    config: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    target: Option<Target>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    max_epochs: Option<usize>,
) -> CliResult<RunConfig> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(&path).map_err(CliError::at(Stage::Config))?,
        None => RunConfig::default(),
    };
    if data_dir.is_some() {
        cfg.data.data_dir = data_dir;
    }
    if let Some(t) = target {
        cfg.data.target = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    if let Some(e) = max_epochs {
        cfg.train.max_epochs = e;
    }
    Ok(cfg.resolve())
}

/// Runs one parsed command, printing a short result line on success.
pub fn execute(cli: Cli) -> CliResult<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Train { config, data_dir, target, seed, out, max_epochs } => {
            let cfg = run_config(config, data_dir, target, seed, out, max_epochs)?;
            let o = train(&cfg)?;
            println!(
                "trained {} epochs, best loss {:.6}; checkpoint {}",
                o.epochs_run,
                o.best_loss,
                o.checkpoint.display()
            );
        }
        Command::Predict { checkpoint, input, threshold, out, config } => {
            let expected = match config {
                Some(p) => Some(RunConfig::load(&p).map_err(CliError::at(Stage::Config))?.model),
                None => None,
            };
            let n = predict(&checkpoint, &input, threshold, &out, expected.as_ref())?;
            println!("wrote predictions for {n} images to {}", out.display());
        }
        Command::Evaluate { checkpoint, data_dir, target, threshold, out } => {
            let o = evaluate(&checkpoint, &data_dir, target, threshold, &out)?;
            print!("{}", o.report.summary_table());
        }
        Command::Synth { n, size, seed, out } => {
            let n = synth(n, size, seed, &out)?;
            println!("wrote {n} phantoms to {}", out.display());
        }
        Command::Augment { data_dir, step, out } => {
            let n = augment(&data_dir, step, &out)?;
            println!("wrote {n} images to {}", out.display());
        }
    }
    Ok(())
}

/// Parses `args` and runs the command, mapping failures to exit codes.
pub fn run<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
