use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::DspError;
use crate::tensor::Real;

/// Added to magnitudes before the log so silent frames stay finite.
pub const LOG_FLOOR: f64 = 1e-20;
/// Bins whose spread over the context is below this are zeroed.
pub const FLAT_STD: f64 = 1e-12;

/// Frame count for an `len`-sample epoch: `(len − n_fft) // n_stride`.
pub fn frame_count(len: usize, n_fft: usize, n_stride: usize) -> usize {
    (len - n_fft) / n_stride
}

/// Log-magnitude short-time Fourier transform with a periodic Hamming window.
pub struct Stft {
    n_fft: usize,
    n_stride: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, n_stride: usize) -> Result<Self, DspError> {
        if n_fft == 0 || n_stride == 0 || n_stride > n_fft {
            return Err(DspError::Contract(format!("need 0 < n_stride ≤ n_fft, got {n_stride} and {n_fft}")));
        }
        let window = (0..n_fft)
            .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / n_fft as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Stft { n_fft, n_stride, window, fft })
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frames(&self, len: usize) -> usize {
        frame_count(len, self.n_fft, self.n_stride)
    }

    /// Spectrogram of one epoch as `[frames × bins]` (frequency fastest).
    /// Frame `t` covers samples `[t·n_stride, t·n_stride + n_fft)`.
    pub fn compute(&self, epoch: &[f64]) -> Result<Vec<f64>, DspError> {
        if epoch.len() < self.n_fft {
            return Err(DspError::Contract(format!(
                "epoch of {} samples is shorter than the {}-point FFT",
                epoch.len(),
                self.n_fft
            )));
        }
        let frames = self.frames(epoch.len());
        let bins = self.bins();
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::default(); self.n_fft];
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let start = t * self.n_stride;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(epoch[start + i] * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            out.extend(buf[..bins].iter().map(|z| (z.norm() + LOG_FLOOR).ln()));
        }
        Ok(out)
    }
}

/// Zero-mean, unit-variance normalisation of a context laid out as
/// `[epochs × channels × frames × bins]`. Statistics are taken per
/// (channel, bin) over every frame of every epoch in the context.
pub fn normalize_context<F: Real>(data: &mut [F], epochs: usize, channels: usize, frames: usize, bins: usize) {
    assert_eq!(data.len(), epochs * channels * frames * bins);
    let count = (epochs * frames) as f64;
    let mut sum = vec![0.0f64; channels * bins];
    for e in 0..epochs {
        for c in 0..channels {
            for t in 0..frames {
                let row = ((e * channels + c) * frames + t) * bins;
                for f in 0..bins {
                    sum[c * bins + f] += data[row + f].as_f64();
                }
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let mut sq = vec![0.0f64; channels * bins];
    for e in 0..epochs {
        for c in 0..channels {
            for t in 0..frames {
                let row = ((e * channels + c) * frames + t) * bins;
                for f in 0..bins {
                    let d = data[row + f].as_f64() - mean[c * bins + f];
                    sq[c * bins + f] += d * d;
                }
            }
        }
    }
    let inv: Vec<f64> = sq
        .iter()
        .map(|s| {
            let sd = (s / count).sqrt();
            if sd < FLAT_STD {
                0.0
            } else {
                1.0 / sd
            }
        })
        .collect();
    for e in 0..epochs {
        for c in 0..channels {
            for t in 0..frames {
                let row = ((e * channels + c) * frames + t) * bins;
                for f in 0..bins {
                    let k = c * bins + f;
                    data[row + f] = F::of((data[row + f].as_f64() - mean[k]) * inv[k]);
                }
            }
        }
    }
}
