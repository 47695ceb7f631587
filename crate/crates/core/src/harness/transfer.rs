use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Cross-dataset F1 matrix and the scores derived from it.
///
/// `f1[i][j]` is the F1 on dataset `j` of a model trained on dataset `i`;
/// `relative[i][j] = f1[i][j] / lfs[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub datasets: Vec<String>,
    pub f1: Vec<Vec<f64>>,
    pub lfs: Vec<f64>,
    pub relative: Vec<Vec<f64>>,
    /// Mean relative F1 reached on each dataset by models trained elsewhere
    /// (column means without the diagonal).
    pub easiness: Vec<f64>,
    /// Mean relative F1 reached elsewhere by the model trained on each
    /// dataset (row means without the diagonal).
    pub generalization: Vec<f64>,
}

pub fn transfer_metrics(datasets: &[String], f1: &[Vec<f64>], lfs: &[f64]) -> Result<TransferReport, HarnessError> {
    let n = lfs.len();
    if n < 2 || datasets.len() != n || f1.len() != n || f1.iter().any(|r| r.len() != n) {
        return Err(HarnessError::Contract(format!(
            "transfer metrics need a square matrix over ≥2 datasets with one baseline each (got {n} baselines)"
        )));
    }
    if let Some(j) = lfs.iter().position(|&v| !(v > 0.0)) {
        return Err(HarnessError::Contract(format!("LFS baseline of {} is not positive", datasets[j])));
    }
    let relative: Vec<Vec<f64>> = f1
        .iter()
        .map(|row| row.iter().zip(lfs).map(|(v, b)| v / b).collect())
        .collect();
    let off = (n - 1) as f64;
    let easiness = (0..n)
        .map(|k| (0..n).filter(|&i| i != k).map(|i| relative[i][k]).sum::<f64>() / off)
        .collect();
    let generalization = (0..n)
        .map(|k| (0..n).filter(|&j| j != k).map(|j| relative[k][j]).sum::<f64>() / off)
        .collect();
    Ok(TransferReport {
        datasets: datasets.to_vec(),
        f1: f1.to_vec(),
        lfs: lfs.to_vec(),
        relative,
        easiness,
        generalization,
    })
}

impl TransferReport {
    /// Rows: source dataset; columns: F1 per target, then LFS, easiness and
    /// generalization of the row's dataset.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source");
        for d in &self.datasets {
            out.push_str(&format!(",{d}"));
        }
        out.push_str(",lfs,easiness,generalization\n");
        for (i, d) in self.datasets.iter().enumerate() {
            out.push_str(d);
            for v in &self.f1[i] {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push_str(&format!(
                ",{:.6},{:.6},{:.6}\n",
                self.lfs[i], self.easiness[i], self.generalization[i]
            ));
        }
        out
    }
}
