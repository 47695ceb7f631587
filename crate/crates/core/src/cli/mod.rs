//! Batch entry points. Every command reads one JSON config, writes its
//! results under the output directory and logs progress to stderr as one
//! JSON object per line.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 training or
//! numerical failure.

mod commands;
mod config;

pub use config::{resolve_path, DatasetRef, RunConfig, SweepConfig, DATA_ROOT_ENV};

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::data::DataError;
use crate::harness::HarnessError;
use crate::model::ModelError;

#[derive(Debug, Parser)]
#[command(name = "sleepnet", version, about = "Montage-invariant sleep staging: train, transfer, evaluate")]
pub struct Cli {
    /// Worker threads for parallel preprocessing and evaluation
    /// (default: available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset described by a generator spec.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Parent directory of the dataset (default: the data root, else `.`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train in the configured setting (LFS, DT or FT) and evaluate.
    Train(RunArgs),
    /// Cross-validated finetuning of a checkpoint on the target dataset.
    Finetune(RunArgs),
    /// Score a checkpoint on the target dataset.
    Evaluate(RunArgs),
    /// F1 of every dataset pair plus easiness and generalization.
    TransferMatrix(RunArgs),
    /// Training-size, channel-ablation or finetune-size sweep.
    Sweep(RunArgs),
    /// Finite-difference checks of every operation, layer and the network.
    Gradcheck {
        /// Model config JSON (default: a reduced configuration).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// A failed command: exit code plus message.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::Config(_) => 2,
            ModelError::Checkpoint(_) | ModelError::Io(_) | ModelError::Json(_) | ModelError::Dsp(_) | ModelError::Contract(_) => 3,
            ModelError::Tensor(_) | ModelError::Nn(_) => 4,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match e {
            HarnessError::Model(m) => return m.into(),
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) | HarnessError::Dsp(_) | HarnessError::Contract(_) | HarnessError::Io(_) | HarnessError::Json(_) => 3,
            HarnessError::NonFinite(_) | HarnessError::Leakage(_) | HarnessError::Tensor(_) | HarnessError::Nn(_) => 4,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::data(format!("json: {e}"))
    }
}

/// One progress event on stderr.
pub fn log_event(event: &str, mut fields: serde_json::Value) {
    if let Some(map) = fields.as_object_mut() {
        map.insert("event".into(), event.into());
    }
    eprintln!("{fields}");
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::config("--workers must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("--workers: {e}")))?;
    }
    match cli.command {
        Command::Generate { config, out } => commands::generate(&config, out),
        Command::Train(a) => commands::train(&a, None),
        Command::Finetune(a) => commands::train(&a, Some(crate::harness::SettingKind::FT)),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::TransferMatrix(a) => commands::transfer_matrix(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Gradcheck { config, out, seed } => commands::gradcheck(config.as_deref(), out, seed),
    }
}

/// Parses arguments, runs, and maps the outcome to the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log_event("error", serde_json::json!({ "code": f.code, "message": f.message }));
            ExitCode::from(f.code)
        }
    }
}
