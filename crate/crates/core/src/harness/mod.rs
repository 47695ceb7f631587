//! Training, inference and evaluation: early-stopped training, the three
//! learning settings (direct transfer, learning from scratch, finetuning),
//! stride-1 inference with geometric aggregation, macro-F1, cross-dataset
//! transfer scores and the sweep experiments.

mod metrics;
mod predict;
mod prepare;
mod report;
mod settings;
mod sweep;
mod train;
mod transfer;

pub use metrics::{argmax, macro_f1, F1Report, GeometricAggregator, PROB_FLOOR};
pub use predict::{inference_starts, pooled_f1, predict_record, predict_records, window_accuracy, RecordPrediction, INFERENCE_BATCH};
pub use prepare::{prepare_record, prepare_records, PreparedRecord};
pub use report::{write_predictions, EvaluationReport, RecordScore};
pub use settings::{
    cross_validate, direct_transfer, evaluate_pool, subject_holdout, Audit, AuditEntry, CrossValidation, DirectTransfer, FoldResult,
    SettingKind, CHECK_DT_LEAKAGE, CHECK_FOLD_ISOLATION, CHECK_ONCE_PER_RECORD, CHECK_POOL_ISOLATION,
};
pub use sweep::{aggregate_runs, run_sweep, SweepGrid, SweepKind, SweepReport, SweepRow, SweepRun, SweepSetup};
pub use train::{train_model, EarlyStopping, PassStats, TrainConfig, TrainOutcome};
pub use transfer::{transfer_metrics, TransferReport};

use thiserror::Error;

use crate::data::DataError;
use crate::dsp::DspError;
use crate::model::ModelError;
use crate::nn::NnError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("non-finite: {0}")]
    NonFinite(String),
    #[error("leakage: {0}")]
    Leakage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
