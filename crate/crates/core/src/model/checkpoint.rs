use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, SleepNet};
use crate::dsp::PreprocessConfig;
use crate::nn::serialize::{decode_params, encode_params, ParamHeader};

pub const HEADER_FILE: &str = "checkpoint.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
const FORMAT: &str = "sleepnet-checkpoint-1";

/// `checkpoint.json`: everything needed to rebuild the model, plus the
/// layout of `weights.bin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub model: ModelConfig,
    pub preprocess: PreprocessConfig,
    pub params: ParamHeader,
}

impl Model {
    /// Writes `dir/checkpoint.json` and `dir/weights.bin`.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        fs::create_dir_all(dir)?;
        let (params, blob) = encode_params(&self.params);
        let header = CheckpointHeader {
            format: FORMAT.into(),
            model: self.net.config.clone(),
            preprocess: self.preprocess.clone(),
            params,
        };
        fs::write(dir.join(HEADER_FILE), serde_json::to_vec_pretty(&header)?)?;
        fs::write(dir.join(WEIGHTS_FILE), blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Model, ModelError> {
        let header: CheckpointHeader = serde_json::from_slice(&fs::read(dir.join(HEADER_FILE))?)?;
        if header.format != FORMAT {
            return Err(ModelError::Checkpoint(format!("unknown checkpoint format {:?}", header.format)));
        }
        header.preprocess.validate()?;
        let blob = fs::read(dir.join(WEIGHTS_FILE))?;
        let params = decode_params::<f32>(&header.params, &blob)?;
        let (net, fresh) = SleepNet::new::<f32, _>(&header.model, &mut ChaCha8Rng::seed_from_u64(0))?;
        let layout = |s: &crate::nn::ParamStore<f32>| s.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect::<Vec<_>>();
        if layout(&params) != layout(&fresh) {
            return Err(ModelError::Checkpoint("weights do not match the configured architecture".into()));
        }
        Ok(Model {
            net,
            params,
            preprocess: header.preprocess,
        })
    }
}
