use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{argmax, macro_f1, F1Report, GeometricAggregator};
use super::{HarnessError, PreparedRecord};
use crate::model::{Model, NUM_CLASSES};

/// Windows per forward pass during inference.
pub const INFERENCE_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordPrediction {
    pub dataset: String,
    pub id: String,
    pub subject: String,
    pub reference: Vec<i8>,
    pub probs: Vec<[f64; NUM_CLASSES]>,
    pub predicted: Vec<usize>,
    /// Number of windows that covered each epoch.
    pub coverage: Vec<usize>,
}

impl RecordPrediction {
    pub fn f1(&self) -> Result<F1Report, HarnessError> {
        macro_f1(&self.predicted, &self.reference)
    }

    /// `epoch,reference,predicted,p_W,p_N1,p_N2,p_N3,p_REM`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,reference,predicted,p_W,p_N1,p_N2,p_N3,p_REM\n");
        for (e, p) in self.probs.iter().enumerate() {
            out.push_str(&format!("{e},{},{}", self.reference[e], self.predicted[e]));
            for v in p {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Window starts for stride-1 inference; a record shorter than the context
/// gets one window spanning the whole record.
pub fn inference_starts(epochs: usize, t: usize) -> (Vec<usize>, usize) {
    if epochs <= t {
        (vec![0], epochs)
    } else {
        ((0..=epochs - t).collect(), t)
    }
}

/// Stride-1 inference with per-epoch geometric aggregation over every
/// window that covers the epoch, using all of the record's channels.
pub fn predict_record(model: &Model, record: &PreparedRecord) -> Result<RecordPrediction, HarnessError> {
    let (starts, len) = inference_starts(record.epochs(), model.config().t);
    let channels: Vec<usize> = (0..record.channels()).collect();
    let mut agg = GeometricAggregator::new(record.epochs());
    for chunk in starts.chunks(INFERENCE_BATCH) {
        let probs = model.predict_windows(&record.stack, &channels, chunk, len)?;
        for (w, &s) in chunk.iter().enumerate() {
            let p: Vec<f64> = probs[w * len * NUM_CLASSES..(w + 1) * len * NUM_CLASSES]
                .iter()
                .map(|&v| v as f64)
                .collect();
            agg.add(s, &p);
        }
    }
    let probs = agg.finish()?;
    Ok(RecordPrediction {
        dataset: record.dataset.clone(),
        id: record.id.clone(),
        subject: record.subject.clone(),
        reference: record.labels.clone(),
        predicted: probs.iter().map(|p| argmax(p)).collect(),
        coverage: agg.coverage().to_vec(),
        probs,
    })
}

/// Records are independent, so they are spread over the worker pool.
pub fn predict_records(model: &Model, records: &[&PreparedRecord]) -> Result<Vec<RecordPrediction>, HarnessError> {
    records.par_iter().map(|r| predict_record(model, r)).collect()
}

/// Macro-F1 over every scored epoch of every record.
pub fn pooled_f1(predictions: &[RecordPrediction]) -> Result<F1Report, HarnessError> {
    let predicted: Vec<usize> = predictions.iter().flat_map(|p| p.predicted.iter().copied()).collect();
    let reference: Vec<i8> = predictions.iter().flat_map(|p| p.reference.iter().copied()).collect();
    macro_f1(&predicted, &reference)
}

/// Hard-label accuracy on non-overlapping windows from epoch 0 (no
/// aggregation); the early-stopping criterion.
pub fn window_accuracy(model: &Model, records: &[&PreparedRecord]) -> Result<f64, HarnessError> {
    let t = model.config().t;
    let per_record: Vec<(usize, usize)> = records
        .par_iter()
        .map(|r| -> Result<(usize, usize), HarnessError> {
            let channels: Vec<usize> = (0..r.channels()).collect();
            let (starts, len) = if r.epochs() <= t {
                (vec![0], r.epochs())
            } else {
                ((0..=r.epochs() - t).step_by(t).collect::<Vec<_>>(), t)
            };
            let (mut correct, mut total) = (0, 0);
            for chunk in starts.chunks(INFERENCE_BATCH) {
                let probs = model.predict_windows(&r.stack, &channels, chunk, len)?;
                for (w, &s) in chunk.iter().enumerate() {
                    for i in 0..len {
                        let label = r.labels[s + i];
                        if label < 0 {
                            continue;
                        }
                        let row = &probs[(w * len + i) * NUM_CLASSES..(w * len + i + 1) * NUM_CLASSES];
                        let p: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                        correct += usize::from(argmax(&p) == label as usize);
                        total += 1;
                    }
                }
            }
            Ok((correct, total))
        })
        .collect::<Result<_, _>>()?;
    let (correct, total) = per_record.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total == 0 {
        return Err(HarnessError::Contract("validation set has no scored epoch".into()));
    }
    Ok(correct as f64 / total as f64)
}
