use super::{ModelConfig, ModelError};
use crate::dsp::{normalize_context, Stft};
use crate::tensor::Real;

/// Log-magnitude spectrograms of every epoch of every channel of a record,
/// stored channel-major as `[channel][epoch × L_fft × F_fft]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramStack {
    pub epochs: usize,
    pub frames: usize,
    pub bins: usize,
    pub channels: Vec<Vec<f32>>,
}

impl SpectrogramStack {
    /// Cuts conditioned signals (target rate) into `l`-sample epochs and
    /// transforms each one.
    pub fn from_signals(signals: &[Vec<f64>], epochs: usize, config: &ModelConfig) -> Result<Self, ModelError> {
        let stft = Stft::new(config.n_fft, config.n_stride)?;
        let (frames, bins) = (stft.frames(config.l), stft.bins());
        let mut channels = Vec::with_capacity(signals.len());
        for s in signals {
            if s.len() < epochs * config.l {
                return Err(ModelError::Contract(format!(
                    "{} samples cannot hold {epochs} epochs of {}",
                    s.len(),
                    config.l
                )));
            }
            let mut out = Vec::with_capacity(epochs * frames * bins);
            for e in 0..epochs {
                out.extend(stft.compute(&s[e * config.l..(e + 1) * config.l])?.into_iter().map(|v| v as f32));
            }
            channels.push(out);
        }
        Ok(SpectrogramStack {
            epochs,
            frames,
            bins,
            channels,
        })
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Normalised context for epochs `start..start+len` of the listed
    /// channels (repeats allowed), laid out `[len × C × L_fft × F_fft]`.
    pub fn window<F: Real>(&self, channels: &[usize], start: usize, len: usize) -> Vec<F> {
        let per_epoch = self.frames * self.bins;
        let mut out = Vec::with_capacity(len * channels.len() * per_epoch);
        for e in start..start + len {
            for &c in channels {
                let src = &self.channels[c][e * per_epoch..(e + 1) * per_epoch];
                out.extend(src.iter().map(|&v| F::of(v as f64)));
            }
        }
        normalize_context(&mut out, len, channels.len(), self.frames, self.bins);
        out
    }
}
