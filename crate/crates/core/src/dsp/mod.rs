//! Record conditioning and the spectrogram front-end.
//!
//! A record goes through band-pass → resample → robust scale (with clip),
//! channel by channel. Each 30 s epoch is then turned into a log-magnitude
//! spectrogram, and a window of consecutive epochs is normalised jointly.

mod filter;
mod resample;
mod scale;
mod spectral;

pub use filter::{bandpass, BandPass, Section};
pub use resample::{rational_factors, resample};
pub use scale::{quantile_sorted, robust_scale, FLAT_IQR};
pub use spectral::{frame_count, normalize_context, Stft, FLAT_STD, LOG_FLOOR};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EPOCH_SECONDS: f64 = 30.0;
pub const FILTER_ORDER: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("{0}")]
    Contract(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub band_low: f64,
    pub band_high: f64,
    pub target_rate: f64,
    pub clip: f64,
    pub n_fft: usize,
    pub n_stride: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            band_low: 0.2,
            band_high: 30.0,
            target_rate: 60.0,
            clip: 20.0,
            n_fft: 128,
            n_stride: 60,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if !(self.band_low > 0.0 && self.band_low < self.band_high && self.band_high <= self.target_rate / 2.0) {
            return Err(DspError::Contract(format!(
                "band edges must satisfy 0 < low < high ≤ target_rate/2, got {} and {} at {} Hz",
                self.band_low, self.band_high, self.target_rate
            )));
        }
        if !(self.clip > 0.0) {
            return Err(DspError::Contract(format!("clip must be positive, got {}", self.clip)));
        }
        if self.n_fft == 0 || self.n_stride == 0 || self.n_stride > self.n_fft {
            return Err(DspError::Contract(format!(
                "need 0 < n_stride ≤ n_fft, got {} and {}",
                self.n_stride, self.n_fft
            )));
        }
        Ok(())
    }

    /// Samples in one epoch after resampling.
    pub fn epoch_samples(&self) -> usize {
        (EPOCH_SECONDS * self.target_rate).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawChannel {
    pub name: String,
    pub fs: f64,
    pub samples: Vec<f64>,
}

/// Multichannel signal; channels may have different rates but must cover
/// the same duration.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub channels: Vec<RawChannel>,
}

impl RawRecord {
    pub fn duration(&self) -> f64 {
        self.channels.first().map_or(0.0, |c| c.samples.len() as f64 / c.fs)
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let first = self.channels.first().ok_or_else(|| DspError::Contract("record has no channels".into()))?;
        let duration = first.samples.len() as f64 / first.fs;
        for c in &self.channels {
            let expected = duration * c.fs;
            if (c.samples.len() as f64 - expected).abs() > 1.0 {
                return Err(DspError::Contract(format!(
                    "channel {} has {} samples, expected {:.0} for {:.1} s",
                    c.name,
                    c.samples.len(),
                    expected,
                    duration
                )));
            }
        }
        Ok(())
    }
}

/// Band-pass, resample to the target rate and robust-scale one channel.
pub fn preprocess_channel(samples: &[f64], fs: f64, cfg: &PreprocessConfig) -> Result<Vec<f64>, DspError> {
    let filtered = bandpass(samples, fs, cfg.band_low, cfg.band_high)?;
    let resampled = resample(&filtered, fs, cfg.target_rate)?;
    Ok(robust_scale(&resampled, cfg.clip))
}

/// Conditioned channels at the target rate, all truncated to the shortest.
pub fn preprocess_record(record: &RawRecord, cfg: &PreprocessConfig) -> Result<Vec<Vec<f64>>, DspError> {
    cfg.validate()?;
    record.validate()?;
    let mut out = record
        .channels
        .iter()
        .map(|c| preprocess_channel(&c.samples, c.fs, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let len = out.iter().map(Vec::len).min().unwrap_or(0);
    out.iter_mut().for_each(|c| c.truncate(len));
    Ok(out)
}

/// Per-epoch spectrograms of a conditioned channel, `[epochs × frames × bins]`.
pub fn channel_spectrograms(signal: &[f64], epochs: usize, stft: &Stft, epoch_len: usize) -> Result<Vec<f64>, DspError> {
    if signal.len() < epochs * epoch_len {
        return Err(DspError::Contract(format!(
            "{} samples cannot hold {epochs} epochs of {epoch_len}",
            signal.len()
        )));
    }
    let mut out = Vec::with_capacity(epochs * stft.frames(epoch_len) * stft.bins());
    for e in 0..epochs {
        out.extend(stft.compute(&signal[e * epoch_len..(e + 1) * epoch_len])?);
    }
    Ok(out)
}
