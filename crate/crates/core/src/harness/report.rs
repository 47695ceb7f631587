use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::predict::RecordPrediction;
use super::settings::AuditEntry;
use super::train::PassStats;
use super::{F1Report, HarnessError};
use crate::data::STAGE_NAMES;
use crate::model::NUM_CLASSES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub dataset: String,
    pub id: String,
    pub epochs: usize,
    pub macro_f1: f64,
}

/// The JSON report written by every evaluating command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// The fully resolved run configuration, seed included.
    pub config: serde_json::Value,
    pub macro_f1: f64,
    pub per_class: BTreeMap<String, Option<f64>>,
    /// Rows: reference stage, columns: predicted stage (W, N1, N2, N3, REM).
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub accuracy: f64,
    pub epochs: usize,
    pub records: Vec<RecordScore>,
    /// One training history per trained model (e.g. per fold).
    pub history: Vec<Vec<PassStats>>,
    pub audit: Vec<AuditEntry>,
}

impl EvaluationReport {
    pub fn new(
        config: serde_json::Value,
        f1: &F1Report,
        predictions: &[RecordPrediction],
        history: Vec<Vec<PassStats>>,
        audit: Vec<AuditEntry>,
    ) -> Result<Self, HarnessError> {
        let records = predictions
            .iter()
            .map(|p| {
                Ok(RecordScore {
                    dataset: p.dataset.clone(),
                    id: p.id.clone(),
                    epochs: p.predicted.len(),
                    macro_f1: p.f1()?.macro_f1,
                })
            })
            .collect::<Result<_, HarnessError>>()?;
        Ok(EvaluationReport {
            config,
            macro_f1: f1.macro_f1,
            per_class: STAGE_NAMES.iter().zip(f1.per_class).map(|(n, v)| (n.to_string(), v)).collect(),
            confusion: f1.confusion,
            accuracy: f1.accuracy,
            epochs: f1.epochs,
            records,
            history,
            audit,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Writes one hypnogram CSV per record into `dir` (created if needed).
pub fn write_predictions(dir: &Path, predictions: &[RecordPrediction]) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    for p in predictions {
        fs::write(dir.join(format!("{}.csv", p.id)), p.to_csv())?;
    }
    Ok(())
}
