use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::predict::{pooled_f1, predict_records, RecordPrediction};
use super::train::{train_model, PassStats, TrainConfig, TrainOutcome};
use super::{F1Report, HarnessError, PreparedRecord};
use crate::data::{holdout_subjects, kfold_split, DatasetSplit};
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SettingKind {
    /// Train on source datasets, evaluate on an unseen target.
    DT,
    /// Cross-validation on the target alone.
    LFS,
    /// Cross-validation on the target starting from a pretrained model.
    FT,
}

impl SettingKind {
    pub fn default_learning_rate(self) -> f64 {
        match self {
            SettingKind::FT => 1e-4,
            _ => 1e-3,
        }
    }

    pub fn default_channel_sampling(self) -> bool {
        self == SettingKind::DT
    }
}

/// One hygiene assertion made by the harness.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub run: String,
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

/// Log of leakage and coverage assertions across runs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Audit {
    pub entries: Vec<AuditEntry>,
}

pub const CHECK_DT_LEAKAGE: &str = "dt-no-target-leakage";
pub const CHECK_FOLD_ISOLATION: &str = "fold-subject-isolation";
pub const CHECK_ONCE_PER_RECORD: &str = "once-per-record-coverage";
pub const CHECK_POOL_ISOLATION: &str = "evaluation-pool-isolation";

impl Audit {
    pub fn record(&mut self, run: &str, check: &str, passed: bool, detail: String) {
        self.entries.push(AuditEntry {
            run: run.to_string(),
            check: check.to_string(),
            passed,
            detail,
        });
    }

    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn count(&self, check: &str) -> usize {
        self.entries.iter().filter(|e| e.check == check).count()
    }

    pub fn extend(&mut self, other: Audit) {
        self.entries.extend(other.entries);
    }

    /// Entries as one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("audit entry serialises") + "\n")
            .collect()
    }
}

fn ids<'a>(records: impl IntoIterator<Item = &'a &'a PreparedRecord>) -> BTreeSet<String> {
    records.into_iter().map(|r| r.id.clone()).collect()
}

/// Splits records by a subject-wise holdout into (train, validation).
pub fn subject_holdout<'a>(
    records: &[&'a PreparedRecord],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<&'a PreparedRecord>, Vec<&'a PreparedRecord>), HarnessError> {
    let (_, held) = holdout_subjects(records.iter().map(|r| r.subject.as_str()), fraction, seed)?;
    Ok(records.iter().partition(|r| !held.contains(&r.subject)))
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub test: Vec<String>,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub best_pass: usize,
    pub history: Vec<PassStats>,
    pub model: Model,
}

#[derive(Clone, Debug)]
pub struct CrossValidation {
    pub split: DatasetSplit,
    pub folds: Vec<FoldResult>,
    pub predictions: Vec<RecordPrediction>,
    pub report: F1Report,
}

/// k-fold cross-validation by subject. For each fold, the remaining
/// subjects are split again into training and validation; `init` supplies
/// the starting model for the fold (fresh for LFS, pretrained for FT).
pub fn cross_validate(
    run: &str,
    records: &[PreparedRecord],
    k: usize,
    init: &dyn Fn(usize) -> Result<Model, HarnessError>,
    cfg: &TrainConfig,
    audit: &mut Audit,
    on_pass: &mut dyn FnMut(usize, &PassStats),
) -> Result<CrossValidation, HarnessError> {
    let split = kfold_split(records.iter().map(|r| r.subject.as_str()), k, cfg.seed)?;
    let mut folds = Vec::with_capacity(k);
    let mut predictions = Vec::with_capacity(records.len());
    for fold in 0..k {
        let (test, rest): (Vec<&PreparedRecord>, Vec<&PreparedRecord>) =
            records.iter().partition(|r| split.fold_of(&r.subject) == Some(fold));
        let fold_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(1 + fold as u64),
            ..cfg.clone()
        };
        let (train, validation) = subject_holdout(&rest, cfg.validation_fraction, fold_cfg.seed)?;

        let test_subjects: BTreeSet<&str> = test.iter().map(|r| r.subject.as_str()).collect();
        let leaked: Vec<&str> = train
            .iter()
            .chain(&validation)
            .map(|r| r.subject.as_str())
            .filter(|s| test_subjects.contains(s))
            .collect();
        audit.record(
            &format!("{run}/fold{fold}"),
            CHECK_FOLD_ISOLATION,
            leaked.is_empty(),
            format!(
                "{} test records ({} subjects), {} train, {} validation; subjects shared with test: {leaked:?}",
                test.len(),
                test_subjects.len(),
                train.len(),
                validation.len()
            ),
        );
        if !leaked.is_empty() {
            return Err(HarnessError::Leakage(format!("{run} fold {fold}: subjects {leaked:?} in train and test")));
        }

        let outcome = train_model(init(fold)?, std::slice::from_ref(&train), &validation, &fold_cfg, cfg.channel_sampling.unwrap_or(false), &mut |s| {
            on_pass(fold, s)
        })?;
        predictions.extend(predict_records(&outcome.model, &test)?);
        folds.push(FoldResult {
            fold,
            test: test.iter().map(|r| r.id.clone()).collect(),
            train: train.iter().map(|r| r.id.clone()).collect(),
            validation: validation.iter().map(|r| r.id.clone()).collect(),
            best_pass: outcome.best_pass,
            history: outcome.history,
            model: outcome.model,
        });
    }

    let mut seen: BTreeMap<&str, usize> = records.iter().map(|r| (r.id.as_str(), 0)).collect();
    for p in &predictions {
        *seen.entry(p.id.as_str()).or_default() += 1;
    }
    let bad: Vec<(&str, usize)> = seen.iter().filter(|(_, &n)| n != 1).map(|(id, &n)| (*id, n)).collect();
    audit.record(
        run,
        CHECK_ONCE_PER_RECORD,
        bad.is_empty(),
        format!("{} records, {} predictions; off-count records: {bad:?}", records.len(), predictions.len()),
    );
    if !bad.is_empty() {
        return Err(HarnessError::Leakage(format!("{run}: records not evaluated exactly once: {bad:?}")));
    }
    predictions.sort_by(|a, b| a.id.cmp(&b.id));
    let report = pooled_f1(&predictions)?;
    Ok(CrossValidation {
        split,
        folds,
        predictions,
        report,
    })
}

#[derive(Clone, Debug)]
pub struct DirectTransfer {
    pub outcome: TrainOutcome,
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

/// Trains on the source datasets only: each source is split by subject
/// into training and validation parts, batches are drawn per source.
/// `excluded` lists the target records, which must not appear anywhere in
/// training or validation.
pub fn direct_transfer(
    run: &str,
    sources: &[Vec<PreparedRecord>],
    excluded: &[&PreparedRecord],
    init: Model,
    cfg: &TrainConfig,
    audit: &mut Audit,
    on_pass: &mut dyn FnMut(&PassStats),
) -> Result<DirectTransfer, HarnessError> {
    let mut groups = Vec::with_capacity(sources.len());
    let mut validation = Vec::new();
    for (i, src) in sources.iter().enumerate() {
        let refs: Vec<&PreparedRecord> = src.iter().collect();
        let (train, val) = subject_holdout(&refs, cfg.validation_fraction, cfg.seed.wrapping_add(i as u64))?;
        groups.push(train);
        validation.extend(val);
    }
    let target_ids = ids(excluded);
    let target_subjects: BTreeSet<(&str, &str)> = excluded.iter().map(|r| (r.dataset.as_str(), r.subject.as_str())).collect();
    let used: Vec<&&PreparedRecord> = groups.iter().flatten().chain(&validation).collect();
    let leaked: Vec<&str> = used
        .iter()
        .filter(|r| target_ids.contains(&r.id) || target_subjects.contains(&(r.dataset.as_str(), r.subject.as_str())))
        .map(|r| r.id.as_str())
        .collect();
    audit.record(
        run,
        CHECK_DT_LEAKAGE,
        leaked.is_empty(),
        format!(
            "{} source records used ({} train, {} validation), {} target records excluded; overlap: {leaked:?}",
            used.len(),
            groups.iter().map(Vec::len).sum::<usize>(),
            validation.len(),
            excluded.len()
        ),
    );
    if !leaked.is_empty() {
        return Err(HarnessError::Leakage(format!("{run}: target records in training: {leaked:?}")));
    }
    let sampling = cfg.channel_sampling.unwrap_or(true);
    let train_ids = groups.iter().flatten().map(|r| r.id.clone()).collect();
    let outcome = train_model(init, &groups, &validation, cfg, sampling, on_pass)?;
    Ok(DirectTransfer {
        outcome,
        train: train_ids,
        validation: validation.iter().map(|r| r.id.clone()).collect(),
    })
}

/// Evaluates on `pool`, asserting first that none of its records took part
/// in training or validation.
pub fn evaluate_pool(
    run: &str,
    model: &Model,
    pool: &[&PreparedRecord],
    used: &BTreeSet<String>,
    audit: &mut Audit,
) -> Result<(Vec<RecordPrediction>, F1Report), HarnessError> {
    let overlap: Vec<&str> = pool.iter().filter(|r| used.contains(&r.id)).map(|r| r.id.as_str()).collect();
    audit.record(
        run,
        CHECK_POOL_ISOLATION,
        overlap.is_empty(),
        format!("{} evaluation records, {} used in training; overlap: {overlap:?}", pool.len(), used.len()),
    );
    if !overlap.is_empty() {
        return Err(HarnessError::Leakage(format!("{run}: evaluation records used in training: {overlap:?}")));
    }
    let predictions = predict_records(model, pool)?;
    let report = pooled_f1(&predictions)?;
    Ok((predictions, report))
}
