use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::model::NUM_CLASSES;

/// Probabilities below this are clipped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    /// `None` for classes absent from both reference and prediction.
    pub per_class: [Option<f64>; NUM_CLASSES],
    /// `confusion[reference][predicted]`.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub accuracy: f64,
    pub epochs: usize,
}

/// Macro-averaged F1 over scored epochs (reference `-1` is skipped).
///
/// Per class, F1 = 2·precision·recall / (precision + recall), i.e. the usual
/// harmonic mean; a class predicted or present but never matched scores 0.
/// Classes that appear in neither sequence are left out of the average.
pub fn macro_f1(predicted: &[usize], reference: &[i8]) -> Result<F1Report, HarnessError> {
    if predicted.len() != reference.len() {
        return Err(HarnessError::Contract(format!(
            "macro_f1: {} predictions for {} reference epochs",
            predicted.len(),
            reference.len()
        )));
    }
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    let mut epochs = 0;
    for (&p, &r) in predicted.iter().zip(reference) {
        if r < 0 {
            continue;
        }
        if p >= NUM_CLASSES || r as usize >= NUM_CLASSES {
            return Err(HarnessError::Contract(format!("macro_f1: label out of range ({p}, {r})")));
        }
        confusion[r as usize][p] += 1;
        epochs += 1;
    }
    if epochs == 0 {
        return Err(HarnessError::Contract("macro_f1: no scored epochs".into()));
    }
    let mut per_class = [None; NUM_CLASSES];
    for (k, slot) in per_class.iter_mut().enumerate() {
        let tp = confusion[k][k] as f64;
        let actual: usize = confusion[k].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[k]).sum();
        if actual + predicted == 0 {
            continue;
        }
        // 2·P·R/(P+R) simplifies to 2·TP/(actual + predicted)
        *slot = Some(2.0 * tp / (actual + predicted) as f64);
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let correct: usize = (0..NUM_CLASSES).map(|k| confusion[k][k]).sum();
    Ok(F1Report {
        macro_f1: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
        confusion,
        accuracy: correct as f64 / epochs as f64,
        epochs,
    })
}

/// Accumulates stride-1 window predictions into per-epoch geometric means.
#[derive(Clone, Debug)]
pub struct GeometricAggregator {
    log_sum: Vec<[f64; NUM_CLASSES]>,
    count: Vec<usize>,
}

impl GeometricAggregator {
    pub fn new(epochs: usize) -> Self {
        GeometricAggregator {
            log_sum: vec![[0.0; NUM_CLASSES]; epochs],
            count: vec![0; epochs],
        }
    }

    /// Adds the predictions of a window starting at `start`;
    /// `probs` is `[len × 5]`.
    pub fn add(&mut self, start: usize, probs: &[f64]) {
        for (i, row) in probs.chunks_exact(NUM_CLASSES).enumerate() {
            let e = start + i;
            for (acc, &p) in self.log_sum[e].iter_mut().zip(row) {
                *acc += p.max(PROB_FLOOR).ln();
            }
            self.count[e] += 1;
        }
    }

    pub fn coverage(&self) -> &[usize] {
        &self.count
    }

    /// exp(mean log π) over the m windows covering each epoch, renormalised
    /// to sum to one.
    pub fn finish(&self) -> Result<Vec<[f64; NUM_CLASSES]>, HarnessError> {
        self.log_sum
            .iter()
            .zip(&self.count)
            .enumerate()
            .map(|(e, (sums, &m))| {
                if m == 0 {
                    return Err(HarnessError::Contract(format!("epoch {e} is covered by no window")));
                }
                let mut p = [0.0; NUM_CLASSES];
                for (out, s) in p.iter_mut().zip(sums) {
                    *out = (s / m as f64).exp();
                }
                let total: f64 = p.iter().sum();
                p.iter_mut().for_each(|v| *v /= total);
                Ok(p)
            })
            .collect()
    }
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_disjoint() {
        let r: Vec<i8> = vec![0, 1, 2, 3, 4, 0];
        let p: Vec<usize> = vec![0, 1, 2, 3, 4, 0];
        assert_eq!(macro_f1(&p, &r).unwrap().macro_f1, 1.0);
        let p: Vec<usize> = vec![1, 2, 3, 4, 0, 1];
        assert_eq!(macro_f1(&p, &r).unwrap().macro_f1, 0.0);
    }

    #[test]
    fn hand_confusion_example() {
        // ref W W N2 N2 REM, pred W N2 N2 N2 REM
        let rep = macro_f1(&[0, 2, 2, 2, 4], &[0, 0, 2, 2, 4]).unwrap();
        assert!((rep.per_class[0].unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((rep.per_class[2].unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(rep.per_class[4], Some(1.0));
        assert_eq!(rep.per_class[1], None);
        assert!((rep.macro_f1 - (2.0 / 3.0 + 0.8 + 1.0) / 3.0).abs() < 1e-12);
        assert!((rep.macro_f1 - 0.8222).abs() < 1e-4);
    }

    #[test]
    fn unscored_reference_skipped() {
        let rep = macro_f1(&[0, 3, 1], &[0, -1, 1]).unwrap();
        assert_eq!(rep.epochs, 2);
        assert_eq!(rep.macro_f1, 1.0);
        assert!(macro_f1(&[0], &[-1]).is_err());
        assert!(macro_f1(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn geometric_examples() {
        let mut agg = GeometricAggregator::new(1);
        agg.add(0, &[0.9, 0.1, 0.0, 0.0, 0.0]);
        agg.add(0, &[0.5, 0.5, 0.0, 0.0, 0.0]);
        let raw: Vec<f64> = agg.log_sum[0].iter().map(|s| (s / 2.0).exp()).collect();
        assert!((raw[0] - 0.6708).abs() < 1e-4 && (raw[1] - 0.2236).abs() < 1e-4);
        assert_eq!(argmax(&agg.finish().unwrap()[0]), 0);

        let pi = [0.1, 0.2, 0.3, 0.15, 0.25];
        let mut agg = GeometricAggregator::new(3);
        for s in 0..2 {
            agg.add(s, &[pi, pi].concat());
        }
        for p in agg.finish().unwrap() {
            for (a, b) in p.iter().zip(pi) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(agg.coverage(), &[1, 2, 1]);
    }
}
