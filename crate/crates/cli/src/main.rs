//! `s2a`: corpus generation, training, inference, evaluation and benchmarking
//! for the speech-to-animation model.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use s2a_core::error::S2aError;

use config::Preset;

/// Usage or validation failure.
pub const EXIT_USAGE: u8 = 2;
/// Failure while running a valid request.
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: String) -> Self {
        CliError { code: EXIT_USAGE, msg }
    }

    pub fn runtime(msg: String) -> Self {
        CliError { code: EXIT_RUNTIME, msg }
    }
}

impl From<S2aError> for CliError {
    fn from(e: S2aError) -> Self {
        let code = match e {
            S2aError::Divergence(_) | S2aError::Io(_) => EXIT_RUNTIME,
            _ => EXIT_USAGE,
        };
        CliError { code, msg: e.to_string() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "s2a", version, about = "Speech-to-animation MOE-Transformer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with a manifest.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        utterances: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        coupled_energy: Option<bool>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Extract a feature sequence from a WAV file and a PPG container.
    Features {
        #[arg(long)]
        wav: PathBuf,
        /// S2A1 container holding a `ppg` tensor (frames × dims).
        #[arg(long)]
        ppg: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep leading and trailing silence.
        #[arg(long)]
        no_vad: bool,
    },
    /// Train one model variant on a corpus.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// moe, dense, no-prosody or dense-features (default: the config's, else moe).
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training log (JSON lines); defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Generate animation CSV from feature files.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// Feature file, or a directory of feature files of the checkpoint's input kind.
        #[arg(long)]
        features: PathBuf,
        /// CSV file, or a directory when `--features` is a directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted and reference animation directories.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value = "pred")]
        name: String,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time single-threaded inference against a matched BLSTM baseline.
    Bench {
        /// Checkpoints to time; without one, a freshly initialized model is used.
        #[arg(long)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenCorpus {
            out,
            utterances,
            seed,
            coupled_energy,
            config,
        } => commands::gen_corpus(&out, utterances, seed, coupled_energy, config.as_deref()),
        Command::Features { wav, ppg, out, no_vad } => commands::features(&wav, &ppg, &out, !no_vad),
        Command::Train {
            corpus,
            config,
            variant,
            out,
            log,
            preset,
            seed,
            epochs,
            batch_size,
            learning_rate,
        } => commands::train(commands::TrainArgs {
            corpus,
            config,
            variant,
            out,
            log,
            preset,
            seed,
            epochs,
            batch_size,
            learning_rate,
        }),
        Command::Infer { ckpt, features, out } => commands::infer(&ckpt, &features, &out),
        Command::Eval {
            pred,
            reference,
            name,
            out,
        } => commands::eval(&pred, &reference, &name, out.as_deref()),
        Command::Bench {
            ckpt,
            frames,
            runs,
            warmup,
            seed,
            preset,
            config,
            out,
        } => commands::bench(commands::BenchArgs {
            ckpt,
            frames,
            runs,
            warmup,
            seed,
            preset,
            config,
            out,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
