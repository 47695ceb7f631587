//! Python module `pysleepnet`: models, checkpoints, record prediction and
//! the evaluation metrics. Configs cross the boundary as JSON strings.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use sleepnet::data::{generate_synthetic_dataset, load_record, SyntheticSpec};
use sleepnet::dsp::{PreprocessConfig, Stft};
use sleepnet::harness::{self, prepare_record, predict_record};
use sleepnet::model::{self, ModelConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: serde::de::DeserializeOwned + Default>(json: Option<&str>) -> PyResult<T> {
    match json {
        None => Ok(T::default()),
        Some(s) => serde_json::from_str(s).map_err(value_err),
    }
}

type RecordOutput = (Vec<usize>, Vec<Vec<f64>>, Vec<i8>);

/// A network with its weights and preprocessing settings.
#[pyclass(module = "pysleepnet")]
struct Model {
    inner: model::Model,
}

#[pymethods]
impl Model {
    /// Fresh weights. `config` and `preprocess` are JSON documents; missing
    /// fields take their defaults.
    #[new]
    #[pyo3(signature = (config=None, preprocess=None, seed=0))]
    fn new(config: Option<&str>, preprocess: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg: ModelConfig = parse(config)?;
        let pre: PreprocessConfig = parse(preprocess)?;
        let inner = model::Model::new(&cfg, &pre, seed).map_err(value_err)?;
        Ok(Model { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = model::Model::load(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Model { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn count_parameters(&self) -> usize {
        self.inner.count_parameters()
    }

    /// Per-component parameter counts.
    fn breakdown(&self) -> Vec<(String, usize)> {
        self.inner.net.breakdown().into_iter().map(|(n, c)| (n.to_string(), c)).collect()
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(self.inner.config()).map_err(value_err)
    }

    /// Stage probabilities for conditioned signals at the target rate
    /// (one list per channel, whole epochs): a list of T rows of 5.
    fn forward(&self, signals: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f32>>> {
        let flat = self.inner.forward_raw(&signals).map_err(value_err)?;
        Ok(flat.chunks(model::NUM_CLASSES).map(<[f32]>::to_vec).collect())
    }

    /// Stride-1 inference over a record directory: returns
    /// `(predicted stages, per-epoch probabilities, reference stages)`.
    fn predict_record(&self, path: PathBuf) -> PyResult<RecordOutput> {
        let record = load_record(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let prepared = prepare_record("python", &record, self.inner.config(), &self.inner.preprocess).map_err(value_err)?;
        let p = predict_record(&self.inner, &prepared).map_err(value_err)?;
        Ok((p.predicted, p.probs.iter().map(|r| r.to_vec()).collect(), p.reference))
    }
}

/// Macro-F1 over scored epochs: `(macro, per-class F1 or None)`.
#[pyfunction]
fn macro_f1(predicted: Vec<usize>, reference: Vec<i8>) -> PyResult<(f64, Vec<Option<f64>>)> {
    let r = harness::macro_f1(&predicted, &reference).map_err(value_err)?;
    Ok((r.macro_f1, r.per_class.to_vec()))
}

/// Transfer report for an F1 matrix and per-dataset LFS baselines, as JSON.
#[pyfunction]
fn transfer_metrics(datasets: Vec<String>, f1: Vec<Vec<f64>>, lfs: Vec<f64>) -> PyResult<String> {
    let r = harness::transfer_metrics(&datasets, &f1, &lfs).map_err(value_err)?;
    serde_json::to_string(&r).map_err(value_err)
}

#[pyfunction]
fn channel_count_probabilities(c_max: usize) -> PyResult<Vec<f64>> {
    model::channel_count_probabilities(c_max).map_err(value_err)
}

/// `(frames, bins)` of one epoch's spectrogram.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn spectrogram_shape(config: Option<&str>) -> PyResult<(usize, usize)> {
    let cfg: ModelConfig = parse(config)?;
    let stft = Stft::new(cfg.n_fft, cfg.n_stride).map_err(value_err)?;
    Ok((stft.frames(cfg.l), stft.bins()))
}

/// Writes a synthetic dataset from a JSON generator spec; returns its directory.
#[pyfunction]
fn generate_synthetic(spec: &str, root: PathBuf) -> PyResult<PathBuf> {
    let spec: SyntheticSpec = serde_json::from_str(spec).map_err(value_err)?;
    generate_synthetic_dataset(&spec, &root).map_err(value_err)
}

#[pymodule]
fn pysleepnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(transfer_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(channel_count_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(spectrogram_shape, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    Ok(())
}
