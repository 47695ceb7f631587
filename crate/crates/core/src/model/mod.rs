//! The variable-montage sleep staging network: frequency reduction,
//! attentive channel recombination, epoch encoder, sequence encoder and
//! classifier, plus the montage sampler used in training.

mod checkpoint;
mod config;
mod gradsuite;
mod input;
mod network;
mod sampler;

pub use checkpoint::{CheckpointHeader, HEADER_FILE, WEIGHTS_FILE};
pub use config::{ModelConfig, NUM_CLASSES};
pub use gradsuite::{gradient_suite, layer_checks, network_checks, operation_checks, reduced_config, GradCheckEntry, GRADCHECK_TOLERANCE};
pub use input::SpectrogramStack;
pub use network::{Breakdown, SleepNet};
pub use sampler::{channel_count_probabilities, sample_channel_count, select_channels};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dsp::{DspError, PreprocessConfig};
use crate::nn::{NnError, ParamStore};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A network with its weights and the preprocessing it was trained with.
#[derive(Clone, Debug)]
pub struct Model {
    pub net: SleepNet,
    pub params: ParamStore<f32>,
    pub preprocess: PreprocessConfig,
}

impl Model {
    pub fn new(config: &ModelConfig, preprocess: &PreprocessConfig, seed: u64) -> Result<Model, ModelError> {
        check_compatible(config, preprocess)?;
        let (net, params) = SleepNet::new(config, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Model {
            net,
            params,
            preprocess: preprocess.clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count()
    }

    /// Inference on normalised windows `x [B × T × C × L_fft × F_fft]`;
    /// returns probabilities `[B × T × 5]`, flattened.
    pub fn predict(&self, x: Tensor<f32>) -> Result<Vec<f32>, ModelError> {
        let mut tape = Tape::new();
        let bindings = self.params.bind(&mut tape, false);
        let input = tape.constant(x);
        // dropout is inactive, the generator is never drawn from
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probs = self.net.forward(&mut tape, &bindings, input, false, &mut rng)?;
        Ok(tape.value(probs).data().to_vec())
    }

    /// Windows `start..start+len` of `stack` over `channels`, batched.
    pub fn predict_windows(
        &self,
        stack: &SpectrogramStack,
        channels: &[usize],
        starts: &[usize],
        len: usize,
    ) -> Result<Vec<f32>, ModelError> {
        let mut data = Vec::new();
        for &s in starts {
            data.extend(stack.window::<f32>(channels, s, len));
        }
        let shape = [starts.len(), len, channels.len(), stack.frames, stack.bins];
        self.predict(Tensor::new(&shape, data)?)
    }

    /// Full pipeline from conditioned signals (one per channel, at the target
    /// rate, covering `len·L` samples): spectrograms, context normalisation
    /// and the network. Returns `[len × 5]` probabilities.
    pub fn forward_raw(&self, signals: &[Vec<f64>]) -> Result<Vec<f32>, ModelError> {
        if signals.is_empty() {
            return Err(ModelError::Contract("no channels".into()));
        }
        let len = signals[0].len() / self.config().l;
        if len == 0 {
            return Err(ModelError::Contract("signal shorter than one epoch".into()));
        }
        let stack = SpectrogramStack::from_signals(signals, len, self.config())?;
        let channels: Vec<usize> = (0..signals.len()).collect();
        self.predict_windows(&stack, &channels, &[0], len)
    }
}

/// The spectrogram geometry is shared between the two configs.
pub fn check_compatible(model: &ModelConfig, pre: &PreprocessConfig) -> Result<(), ModelError> {
    model.validate()?;
    pre.validate()?;
    if model.n_fft != pre.n_fft || model.n_stride != pre.n_stride || model.l != pre.epoch_samples() {
        return Err(ModelError::Config(format!(
            "model expects n_fft={}, n_stride={}, {} samples per epoch; preprocessing gives n_fft={}, n_stride={}, {}",
            model.n_fft,
            model.n_stride,
            model.l,
            pre.n_fft,
            pre.n_stride,
            pre.epoch_samples()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_count() {
        let m = Model::new(&ModelConfig::default(), &PreprocessConfig::default(), 0).unwrap();
        assert_eq!(m.count_parameters(), 180_143);
        assert_eq!(m.net.count_parameters(), 180_143);
        let b = m.net.breakdown();
        assert_eq!(b[0], ("frequency reduction", 2112));
        assert_eq!(b[7], ("classifier", 505));
        let rel = (180_143f64 - 180_343.0).abs() / 180_343.0;
        assert!(rel < 0.03);
    }

    #[test]
    fn incompatible_configs_rejected() {
        let cfg = ModelConfig { l: 1500, ..Default::default() };
        assert!(Model::new(&cfg, &PreprocessConfig::default(), 0).is_err());
        let cfg = ModelConfig { classes: 4, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::new(&ModelConfig::default(), &PreprocessConfig::default(), 7).unwrap();
        m.save(dir.path()).unwrap();
        let back = Model::load(dir.path()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.net.config, m.net.config);
        assert_eq!(back.preprocess, m.preprocess);
    }
}
