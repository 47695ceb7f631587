use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dsp::frame_count;

pub const NUM_CLASSES: usize = 5;

/// Architecture hyperparameters. Field names follow the usual symbols:
/// `t` epochs per context, `l` samples per epoch, `f_red` reduced bins,
/// `k1`/`k2` attention context sizes, `h1`/`h2` GRU widths, `p` epoch
/// feature size, `p1`/`p2` dropout rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub t: usize,
    pub l: usize,
    pub n_fft: usize,
    pub n_stride: usize,
    pub f_red: usize,
    pub n_heads: usize,
    pub k1: usize,
    pub h1: usize,
    pub p1: f64,
    pub p: usize,
    pub k2: usize,
    pub h2: usize,
    pub p2: f64,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t: 21,
            l: 1800,
            n_fft: 128,
            n_stride: 60,
            f_red: 32,
            n_heads: 4,
            k1: 30,
            h1: 64,
            p1: 0.5,
            p: 50,
            k2: 25,
            h2: 50,
            p2: 0.5,
            classes: NUM_CLASSES,
        }
    }
}

impl ModelConfig {
    pub fn f_fft(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn l_fft(&self) -> usize {
        frame_count(self.l, self.n_fft, self.n_stride)
    }

    /// Width of the sequence encoder output seen by the classifier.
    pub fn q(&self) -> usize {
        2 * self.h2
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = [
            ("t", self.t),
            ("l", self.l),
            ("n_fft", self.n_fft),
            ("n_stride", self.n_stride),
            ("f_red", self.f_red),
            ("n_heads", self.n_heads),
            ("k1", self.k1),
            ("h1", self.h1),
            ("p", self.p),
            ("k2", self.k2),
            ("h2", self.h2),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.classes != NUM_CLASSES {
            return Err(ModelError::Config(format!("class count is fixed at {NUM_CLASSES}, got {}", self.classes)));
        }
        for (name, p) in [("p1", self.p1), ("p2", self.p2)] {
            if !(0.0..1.0).contains(&p) {
                return Err(ModelError::Config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        if self.n_stride > self.n_fft || self.l < self.n_fft + self.n_stride {
            return Err(ModelError::Config(format!(
                "need n_stride ≤ n_fft and at least one frame: l={}, n_fft={}, n_stride={}",
                self.l, self.n_fft, self.n_stride
            )));
        }
        Ok(())
    }
}
