use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::settings::{evaluate_pool, subject_holdout, Audit};
use super::train::{train_model, PassStats, TrainConfig};
use super::{HarnessError, PreparedRecord};
use crate::data::Modality;
use crate::dsp::PreprocessConfig;
use crate::model::{Model, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    TrainingSize,
    ChannelAblation,
    FinetuneSize,
}

/// Points of a sweep: training-set sizes, modality subsets, or numbers of
/// finetuning records (0 = the pretrained model as is).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "points")]
pub enum SweepGrid {
    TrainingSize(Vec<usize>),
    ChannelAblation(Vec<Vec<Modality>>),
    FinetuneSize(Vec<usize>),
}

impl SweepGrid {
    pub fn kind(&self) -> SweepKind {
        match self {
            SweepGrid::TrainingSize(_) => SweepKind::TrainingSize,
            SweepGrid::ChannelAblation(_) => SweepKind::ChannelAblation,
            SweepGrid::FinetuneSize(_) => SweepKind::FinetuneSize,
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            SweepGrid::TrainingSize(g) | SweepGrid::FinetuneSize(g) => g.iter().map(|n| n.to_string()).collect(),
            SweepGrid::ChannelAblation(g) => g
                .iter()
                .map(|set| set.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("+"))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct SweepSetup<'a> {
    pub target: &'a [PreparedRecord],
    pub model: &'a ModelConfig,
    pub preprocess: &'a PreprocessConfig,
    /// Base training settings; each run derives its own seed from it.
    pub train: TrainConfig,
    pub repetitions: usize,
    /// Share of target subjects set aside, once, as the evaluation pool
    /// shared by every run.
    pub evaluation_fraction: f64,
    /// Reference for the "% of LFS" columns. When absent it is measured by
    /// training from scratch on the whole remaining pool.
    pub lfs_baseline: Option<f64>,
    /// Starting point of finetune-size runs.
    pub pretrained: Option<&'a Model>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub point: String,
    pub repetition: usize,
    pub seed: u64,
    pub train_records: usize,
    pub macro_f1: f64,
    pub pct_lfs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: String,
    pub runs: usize,
    pub mean_f1: f64,
    pub min_f1: f64,
    pub max_f1: f64,
    pub mean_pct_lfs: Option<f64>,
    pub min_pct_lfs: Option<f64>,
    pub max_pct_lfs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub lfs_baseline: Option<f64>,
    pub evaluation_pool: Vec<String>,
    pub runs: Vec<SweepRun>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let mut out = String::from("point,runs,mean_f1,min_f1,max_f1,mean_pct_lfs,min_pct_lfs,max_pct_lfs\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{},{},{}\n",
                r.point,
                r.runs,
                r.mean_f1,
                r.min_f1,
                r.max_f1,
                opt(r.mean_pct_lfs),
                opt(r.min_pct_lfs),
                opt(r.max_pct_lfs)
            ));
        }
        out
    }
}

/// One row per grid point, in grid order.
pub fn aggregate_runs(labels: &[String], runs: &[SweepRun]) -> Vec<SweepRow> {
    labels
        .iter()
        .filter_map(|label| {
            let f1: Vec<f64> = runs.iter().filter(|r| &r.point == label).map(|r| r.macro_f1).collect();
            if f1.is_empty() {
                return None;
            }
            let pct: Vec<f64> = runs.iter().filter(|r| &r.point == label).filter_map(|r| r.pct_lfs).collect();
            let stats = |v: &[f64]| {
                (
                    v.iter().sum::<f64>() / v.len() as f64,
                    v.iter().copied().fold(f64::INFINITY, f64::min),
                    v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            };
            let (mean_f1, min_f1, max_f1) = stats(&f1);
            let (mean_pct_lfs, min_pct_lfs, max_pct_lfs) = if pct.len() == f1.len() {
                let (a, b, c) = stats(&pct);
                (Some(a), Some(b), Some(c))
            } else {
                (None, None, None)
            };
            Some(SweepRow {
                point: label.clone(),
                runs: f1.len(),
                mean_f1,
                min_f1,
                max_f1,
                mean_pct_lfs,
                min_pct_lfs,
                max_pct_lfs,
            })
        })
        .collect()
}

fn used_ids(train: &[&PreparedRecord], val: &[&PreparedRecord]) -> BTreeSet<String> {
    train.iter().chain(val).map(|r| r.id.clone()).collect()
}

/// Trains one model on `records` (subject-wise train/validation split) and
/// scores it on `pool`.
fn train_and_score(
    run: &str,
    init: Model,
    records: &[&PreparedRecord],
    pool: &[&PreparedRecord],
    cfg: &TrainConfig,
    audit: &mut Audit,
    on_pass: &mut dyn FnMut(&PassStats),
) -> Result<f64, HarnessError> {
    let (train, val) = subject_holdout(records, cfg.validation_fraction, cfg.seed)?;
    let outcome = train_model(init, std::slice::from_ref(&train), &val, cfg, cfg.channel_sampling.unwrap_or(false), on_pass)?;
    let (_, report) = evaluate_pool(run, &outcome.model, pool, &used_ids(&train, &val), audit)?;
    Ok(report.macro_f1)
}

fn sample<'a>(pool: &[&'a PreparedRecord], n: usize, seed: u64) -> Result<Vec<&'a PreparedRecord>, HarnessError> {
    if n > pool.len() {
        return Err(HarnessError::Config(format!("sweep point {n} exceeds the {} records available for training", pool.len())));
    }
    let mut picked = pool.to_vec();
    picked.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    picked.truncate(n);
    Ok(picked)
}

/// Repeated train/evaluate runs over a grid. The target is split once, by
/// subject, into a training pool and a fixed evaluation pool; every run of
/// every point is scored on that same evaluation pool.
pub fn run_sweep(
    setup: &SweepSetup,
    grid: &SweepGrid,
    audit: &mut Audit,
    on_pass: &mut dyn FnMut(&str, usize, &PassStats),
) -> Result<SweepReport, HarnessError> {
    setup.train.validate()?;
    if grid.is_empty() {
        return Err(HarnessError::Config("sweep grid is empty".into()));
    }
    if setup.repetitions == 0 {
        return Err(HarnessError::Config("sweep needs at least one repetition".into()));
    }
    if matches!(grid, SweepGrid::FinetuneSize(_)) && setup.pretrained.is_none() {
        return Err(HarnessError::Config("finetune-size sweep needs a pretrained checkpoint".into()));
    }
    let all: Vec<&PreparedRecord> = setup.target.iter().collect();
    let (pool, eval) = subject_holdout(&all, setup.evaluation_fraction, setup.train.seed)?;
    let labels = grid.labels();
    let fresh = |seed: u64| Model::new(setup.model, setup.preprocess, seed);

    let lfs_baseline = match setup.lfs_baseline {
        Some(b) => Some(b),
        None => {
            let cfg = setup.train.clone();
            let f1 = train_and_score("sweep/baseline", fresh(cfg.seed)?, &pool, &eval, &cfg, audit, &mut |s| {
                on_pass("baseline", 0, s)
            })?;
            Some(f1)
        }
    };
    let pct = |f1: f64| lfs_baseline.filter(|&b| b > 0.0).map(|b| 100.0 * f1 / b);

    let mut runs = Vec::new();
    for (pi, label) in labels.iter().enumerate() {
        let mut zero_shot = None;
        for rep in 0..setup.repetitions {
            let seed = setup.train.seed.wrapping_add(1 + (pi * setup.repetitions + rep) as u64);
            let cfg = TrainConfig { seed, ..setup.train.clone() };
            let run = format!("sweep/{label}/rep{rep}");
            let mut hook = |s: &PassStats| on_pass(label, rep, s);
            let (f1, n) = match grid {
                SweepGrid::TrainingSize(g) => {
                    let picked = sample(&pool, g[pi], seed)?;
                    (train_and_score(&run, fresh(seed)?, &picked, &eval, &cfg, audit, &mut hook)?, picked.len())
                }
                SweepGrid::ChannelAblation(g) => {
                    let keep = &g[pi];
                    let restrict = |rs: &[&PreparedRecord]| -> Vec<PreparedRecord> { rs.iter().filter_map(|r| r.restrict(keep)).collect() };
                    let (sub_pool, sub_eval) = (restrict(&pool), restrict(&eval));
                    if sub_eval.is_empty() || sub_pool.is_empty() {
                        return Err(HarnessError::Config(format!("no record has channels of modality {label}")));
                    }
                    let pool_refs: Vec<&PreparedRecord> = sub_pool.iter().collect();
                    let eval_refs: Vec<&PreparedRecord> = sub_eval.iter().collect();
                    (train_and_score(&run, fresh(seed)?, &pool_refs, &eval_refs, &cfg, audit, &mut hook)?, pool_refs.len())
                }
                SweepGrid::FinetuneSize(g) => {
                    let pretrained = setup.pretrained.expect("checked above");
                    if g[pi] == 0 {
                        // no finetuning records: the pretrained model itself
                        if zero_shot.is_none() {
                            let (_, report) = evaluate_pool(&run, pretrained, &eval, &BTreeSet::new(), audit)?;
                            zero_shot = Some(report.macro_f1);
                        }
                        (zero_shot.expect("just set"), 0)
                    } else {
                        let picked = sample(&pool, g[pi], seed)?;
                        (train_and_score(&run, pretrained.clone(), &picked, &eval, &cfg, audit, &mut hook)?, picked.len())
                    }
                }
            };
            runs.push(SweepRun {
                point: label.clone(),
                repetition: rep,
                seed,
                train_records: n,
                macro_f1: f1,
                pct_lfs: pct(f1),
            });
        }
    }
    Ok(SweepReport {
        kind: grid.kind(),
        lfs_baseline,
        evaluation_pool: eval.iter().map(|r| r.id.clone()).collect(),
        rows: aggregate_runs(&labels, &runs),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_runs_three_rows() {
        let grid = SweepGrid::TrainingSize(vec![2, 4, 8]);
        let labels = grid.labels();
        let runs: Vec<SweepRun> = (0..9)
            .map(|i| SweepRun {
                point: labels[i / 3].clone(),
                repetition: i % 3,
                seed: i as u64,
                train_records: 2 << (i / 3),
                macro_f1: 0.5 + 0.01 * i as f64,
                pct_lfs: Some(50.0 + i as f64),
            })
            .collect();
        let rows = aggregate_runs(&labels, &runs);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].runs, 3);
        assert!((rows[1].mean_f1 - 0.54).abs() < 1e-12);
        assert!((rows[2].min_f1 - 0.56).abs() < 1e-12 && (rows[2].max_f1 - 0.58).abs() < 1e-12);
        assert_eq!(rows[0].max_pct_lfs, Some(52.0));
    }

    #[test]
    fn modality_labels() {
        let grid = SweepGrid::ChannelAblation(vec![vec![Modality::Eeg], vec![Modality::Eog], vec![Modality::Eeg, Modality::Eog]]);
        assert_eq!(grid.labels(), ["EEG", "EOG", "EEG+EOG"]);
        let json = serde_json::to_string(&grid).unwrap();
        assert_eq!(json, r#"{"kind":"channel-ablation","points":[["EEG"],["EOG"],["EEG","EOG"]]}"#);
    }
}
