use rayon::prelude::*;

use super::HarnessError;
use crate::data::{Modality, Record};
use crate::dsp::{preprocess_record, PreprocessConfig};
use crate::model::{check_compatible, ModelConfig, SpectrogramStack};

/// A record after conditioning: per-epoch spectrograms of every channel
/// plus the reference hypnogram, trimmed to the epochs both cover.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedRecord {
    pub dataset: String,
    pub id: String,
    pub subject: String,
    pub modalities: Vec<Modality>,
    pub labels: Vec<i8>,
    pub stack: SpectrogramStack,
}

impl PreparedRecord {
    pub fn epochs(&self) -> usize {
        self.labels.len()
    }

    pub fn channels(&self) -> usize {
        self.stack.channel_count()
    }

    pub fn scored(&self) -> usize {
        self.labels.iter().filter(|&&l| l >= 0).count()
    }

    /// Keeps only channels of the given modalities; `None` when none is left.
    pub fn restrict(&self, keep: &[Modality]) -> Option<PreparedRecord> {
        let idx: Vec<usize> = (0..self.modalities.len()).filter(|&c| keep.contains(&self.modalities[c])).collect();
        if idx.is_empty() {
            return None;
        }
        let mut out = self.clone();
        out.modalities = idx.iter().map(|&c| self.modalities[c]).collect();
        out.stack.channels = idx.iter().map(|&c| self.stack.channels[c].clone()).collect();
        Some(out)
    }
}

pub fn prepare_record(dataset: &str, record: &Record, model: &ModelConfig, pre: &PreprocessConfig) -> Result<PreparedRecord, HarnessError> {
    check_compatible(model, pre)?;
    let signals = preprocess_record(&record.to_raw(), pre)?;
    let available = signals[0].len() / model.l;
    let epochs = available.min(record.reference().len());
    if epochs == 0 {
        return Err(HarnessError::Contract(format!("record {} is shorter than one epoch", record.id())));
    }
    let stack = SpectrogramStack::from_signals(&signals, epochs, model)?;
    Ok(PreparedRecord {
        dataset: dataset.to_string(),
        id: record.id().to_string(),
        subject: record.subject().to_string(),
        modalities: record.manifest.channels.iter().map(|c| c.modality).collect(),
        labels: record.reference()[..epochs].to_vec(),
        stack,
    })
}

/// Prepares records in parallel, keeping their order.
pub fn prepare_records(dataset: &str, records: &[Record], model: &ModelConfig, pre: &PreprocessConfig) -> Result<Vec<PreparedRecord>, HarnessError> {
    records
        .par_iter()
        .map(|r| prepare_record(dataset, r, model, pre))
        .collect()
}
