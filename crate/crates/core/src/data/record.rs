use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::dsp::{RawChannel, RawRecord, EPOCH_SECONDS};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const UNSCORED: i8 = -1;
pub const STAGE_NAMES: [&str; 5] = ["W", "N1", "N2", "N3", "REM"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    Eeg,
    Eog,
    Emg,
    Other,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Eeg => "EEG",
            Modality::Eog => "EOG",
            Modality::Emg => "EMG",
            Modality::Other => "OTHER",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelEntry {
    pub name: String,
    pub modality: Modality,
    /// Hz.
    pub sampling_rate: f64,
    /// Raw little-endian f32 samples, relative to the record directory.
    pub file: String,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypnogramEntry {
    pub scorer: String,
    /// One integer per line, relative to the record directory.
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordManifest {
    pub record_id: String,
    pub subject_id: String,
    pub channels: Vec<ChannelEntry>,
    pub hypnograms: Vec<HypnogramEntry>,
}

/// A PSG night: signals and one hypnogram per scorer (first one is the
/// reference used for training and evaluation).
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub manifest: RecordManifest,
    pub signals: Vec<Vec<f32>>,
    pub hypnograms: BTreeMap<String, Vec<i8>>,
}

impl Record {
    pub fn id(&self) -> &str {
        &self.manifest.record_id
    }

    pub fn subject(&self) -> &str {
        &self.manifest.subject_id
    }

    pub fn duration(&self) -> f64 {
        let c = &self.manifest.channels[0];
        c.samples as f64 / c.sampling_rate
    }

    /// Epochs covered by the signals.
    pub fn epoch_count(&self) -> usize {
        (self.duration() / EPOCH_SECONDS + 1e-9).floor() as usize
    }

    /// The first scorer's hypnogram.
    pub fn reference(&self) -> &[i8] {
        let scorer = &self.manifest.hypnograms[0].scorer;
        &self.hypnograms[scorer]
    }

    pub fn to_raw(&self) -> RawRecord {
        RawRecord {
            channels: self
                .manifest
                .channels
                .iter()
                .zip(&self.signals)
                .map(|(c, s)| RawChannel {
                    name: c.name.clone(),
                    fs: c.sampling_rate,
                    samples: s.iter().map(|&v| v as f64).collect(),
                })
                .collect(),
        }
    }

    /// Keeps only the channels whose modality is listed (all if `None`).
    pub fn restrict_modalities(&mut self, keep: Option<&[Modality]>) -> Result<(), DataError> {
        let Some(keep) = keep else { return Ok(()) };
        let mut channels = Vec::new();
        let mut signals = Vec::new();
        for (c, s) in self.manifest.channels.drain(..).zip(self.signals.drain(..)) {
            if keep.contains(&c.modality) {
                channels.push(c);
                signals.push(s);
            }
        }
        if channels.is_empty() {
            return Err(DataError::Invalid(format!(
                "record {} has no channel of modality {keep:?}",
                self.manifest.record_id
            )));
        }
        self.manifest.channels = channels;
        self.signals = signals;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let m = &self.manifest;
        let err = |msg: String| Err(DataError::Invalid(format!("record {}: {msg}", m.record_id)));
        if m.channels.is_empty() {
            return err("no channels".into());
        }
        if m.hypnograms.is_empty() {
            return err("no hypnogram".into());
        }
        if m.channels.len() != self.signals.len() {
            return err("channel list and signals disagree".into());
        }
        let duration = self.duration();
        for (c, s) in m.channels.iter().zip(&self.signals) {
            if !(c.sampling_rate > 0.0) {
                return err(format!("channel {} has sampling rate {}", c.name, c.sampling_rate));
            }
            if s.len() != c.samples {
                return err(format!("channel {} declares {} samples, holds {}", c.name, c.samples, s.len()));
            }
            if (c.samples as f64 - duration * c.sampling_rate).abs() > 1.0 {
                return err(format!("channel {} does not span {duration} s", c.name));
            }
        }
        let epochs = self.epoch_count();
        for h in &m.hypnograms {
            let Some(labels) = self.hypnograms.get(&h.scorer) else {
                return err(format!("hypnogram of scorer {} missing", h.scorer));
            };
            if labels.len() != epochs {
                return err(format!(
                    "hypnogram {} has {} epochs, signals cover {epochs}",
                    h.scorer,
                    labels.len()
                ));
            }
            if let Some(bad) = labels.iter().find(|&&v| !(UNSCORED..=4).contains(&v)) {
                return err(format!("unknown stage value {bad} in hypnogram {}", h.scorer));
            }
        }
        Ok(())
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

fn read_f32_le(path: &Path) -> Result<Vec<f32>, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(DataError::Invalid(format!("{}: {} bytes is not a whole number of f32", path.display(), bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_hypnogram(path: &Path) -> Result<Vec<i8>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse::<i8>()
                .ok()
                .filter(|v| (UNSCORED..=4).contains(v))
                .ok_or_else(|| DataError::Invalid(format!("{} line {}: unknown stage value {l:?}", path.display(), i + 1)))
        })
        .collect()
}

/// Reads a record from its directory or its manifest path.
pub fn load_record(path: &Path) -> Result<Record, DataError> {
    let mpath = manifest_path(path);
    let dir = mpath.parent().unwrap_or(Path::new("."));
    let text = fs::read(&mpath).map_err(|e| DataError::io(&mpath, e))?;
    let manifest: RecordManifest =
        serde_json::from_slice(&text).map_err(|e| DataError::Invalid(format!("{}: {e}", mpath.display())))?;
    let mut signals = Vec::with_capacity(manifest.channels.len());
    for c in &manifest.channels {
        let p = dir.join(&c.file);
        let s = read_f32_le(&p)?;
        if s.len() != c.samples {
            return Err(DataError::Invalid(format!(
                "{}: manifest declares {} samples, file holds {}",
                p.display(),
                c.samples,
                s.len()
            )));
        }
        signals.push(s);
    }
    let mut hypnograms = BTreeMap::new();
    for h in &manifest.hypnograms {
        hypnograms.insert(h.scorer.clone(), read_hypnogram(&dir.join(&h.file))?);
    }
    let record = Record {
        manifest,
        signals,
        hypnograms,
    };
    record.validate()?;
    Ok(record)
}

/// Writes `dir/manifest.json` plus the channel and hypnogram files it names.
pub fn save_record(record: &Record, dir: &Path) -> Result<(), DataError> {
    record.validate()?;
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    for (c, s) in record.manifest.channels.iter().zip(&record.signals) {
        let bytes: Vec<u8> = s.iter().flat_map(|v| v.to_le_bytes()).collect();
        let p = dir.join(&c.file);
        fs::write(&p, bytes).map_err(|e| DataError::io(&p, e))?;
    }
    for h in &record.manifest.hypnograms {
        let mut text = String::new();
        for v in &record.hypnograms[&h.scorer] {
            text.push_str(&v.to_string());
            text.push('\n');
        }
        let p = dir.join(&h.file);
        fs::write(&p, text).map_err(|e| DataError::io(&p, e))?;
    }
    let p = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&record.manifest).expect("manifest serialises");
    fs::write(&p, json).map_err(|e| DataError::io(&p, e))
}
