//! On-disk records, datasets, subject-wise splits, windowing and the
//! synthetic PSG generator.
//!
//! A record is a directory:
//!
//! ```text
//! <record>/manifest.json     record_id, subject_id, channels[], hypnograms[]
//! <record>/<channel file>    raw little-endian f32 samples
//! <record>/<hypnogram file>  one stage code per line: 0=W 1=N1 2=N2 3=N3 4=REM, -1 unscored
//! ```
//!
//! Each `channels[]` entry has `name`, `modality` (`EEG`, `EOG`, `EMG` or
//! `OTHER`), `sampling_rate` in Hz, `file` and `samples`. Each
//! `hypnograms[]` entry has `scorer` and `file`. A dataset is a directory
//! whose subdirectories are records.

mod record;
mod split;
pub mod synthetic;
mod windows;

pub use record::{
    load_record, save_record, ChannelEntry, HypnogramEntry, Modality, Record, RecordManifest, MANIFEST_FILE, STAGE_NAMES,
    UNSCORED,
};
pub use split::{holdout_subjects, kfold_split, DatasetSplit};
pub use synthetic::{generate_synthetic_dataset, SyntheticSpec};
pub use windows::{coverage, window_batches, Window, WindowMode};

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Record directories of one dataset, sorted by name.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub root: PathBuf,
    pub records: Vec<PathBuf>,
}

impl Dataset {
    pub fn scan(root: &Path) -> Result<Dataset, DataError> {
        let mut records = Vec::new();
        for entry in fs::read_dir(root).map_err(|e| DataError::io(root, e))? {
            let path = entry.map_err(|e| DataError::io(root, e))?.path();
            if path.join(MANIFEST_FILE).is_file() {
                records.push(path);
            }
        }
        if records.is_empty() {
            return Err(DataError::Invalid(format!("{}: no record directories", root.display())));
        }
        records.sort();
        let name = root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| root.display().to_string());
        Ok(Dataset {
            name,
            root: root.to_path_buf(),
            records,
        })
    }

    /// Loads records in parallel. `only` restricts to the listed record
    /// directory names; `modalities` keeps only channels of those kinds.
    pub fn load(&self, only: Option<&[String]>, modalities: Option<&[Modality]>) -> Result<Vec<Record>, DataError> {
        let selected: Vec<&PathBuf> = match only {
            None => self.records.iter().collect(),
            Some(names) => {
                let mut out = Vec::new();
                for n in names {
                    let p = self
                        .records
                        .iter()
                        .find(|p| p.file_name().is_some_and(|f| f.to_string_lossy() == *n))
                        .ok_or_else(|| DataError::Invalid(format!("dataset {} has no record {n}", self.name)))?;
                    out.push(p);
                }
                out
            }
        };
        selected
            .par_iter()
            .map(|p| {
                let mut r = load_record(p)?;
                r.restrict_modalities(modalities)?;
                Ok(r)
            })
            .collect()
    }
}
