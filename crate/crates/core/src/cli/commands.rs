use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::config::{resolve_path, RunConfig, DATA_ROOT_ENV};
use super::{log_event, Failure, RunArgs};
use crate::data::{generate_synthetic_dataset, Dataset, SyntheticSpec};
use crate::dsp::PreprocessConfig;
use crate::harness::{
    cross_validate, direct_transfer, evaluate_pool, pooled_f1, predict_records, prepare_records, run_sweep, subject_holdout, train_model,
    transfer_metrics, write_predictions, Audit, EvaluationReport, PassStats, PreparedRecord, SettingKind, SweepGrid, SweepSetup,
};
use crate::model::{gradient_suite, reduced_config, Model, ModelConfig, GRADCHECK_TOLERANCE};

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn pass_logger(run: String) -> impl FnMut(usize, &PassStats) {
    move |fold, s| {
        log_event(
            "pass",
            json!({
                "run": run, "fold": fold, "pass": s.pass, "train_loss": s.train_loss,
                "val_accuracy": s.val_accuracy, "steps": s.steps, "seconds": s.seconds,
            }),
        )
    }
}

/// Config with command-line overrides applied, plus the output directory.
fn resolve(args: &RunArgs, setting: Option<SettingKind>) -> Result<(RunConfig, PathBuf), Failure> {
    let mut cfg = RunConfig::parse(&read(&args.config)?, setting)?;
    let seed = args.seed.or(cfg.seed).unwrap_or(cfg.train.seed);
    cfg.seed = Some(seed);
    cfg.train.seed = seed;
    if let Some(c) = &args.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    let out = args.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    cfg.output = Some(out.clone());
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    Ok((cfg, out))
}

fn load_prepared(cfg: &RunConfig, name: &str, model: &ModelConfig, pre: &PreprocessConfig) -> Result<Vec<PreparedRecord>, Failure> {
    let d = cfg.dataset(name)?;
    let ds = Dataset::scan(&resolve_path(&d.path))?;
    let records = ds.load(d.records.as_deref(), d.modalities.as_deref())?;
    let prepared = prepare_records(name, &records, model, pre)?;
    log_event("dataset", json!({ "name": name, "records": prepared.len() }));
    Ok(prepared)
}

/// The checkpoint's configuration wins; a non-default model section in
/// the run config must agree with it.
fn load_checkpoint(cfg: &RunConfig) -> Result<Model, Failure> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Failure::config("a checkpoint is required (--checkpoint or \"checkpoint\")"))?;
    let model = Model::load(path)?;
    if cfg.model != ModelConfig::default() && &cfg.model != model.config() {
        return Err(Failure::config(format!("checkpoint {} was built with a different model config", path.display())));
    }
    if cfg.preprocess != PreprocessConfig::default() && cfg.preprocess != model.preprocess {
        return Err(Failure::config(format!("checkpoint {} was trained with different preprocessing", path.display())));
    }
    Ok(model)
}

fn finish(out: &Path, report: &EvaluationReport, audit: &Audit) -> Result<(), Failure> {
    report.write(&out.join("report.json"))?;
    fs::write(out.join("audit.jsonl"), audit.to_jsonl())?;
    log_event(
        "done",
        json!({ "macro_f1": report.macro_f1, "epochs": report.epochs, "audit_passed": audit.all_passed(), "out": out }),
    );
    Ok(())
}

pub fn generate(config: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let spec: SyntheticSpec = serde_json::from_str(&read(config)?).map_err(|e| Failure::config(format!("spec: {e}")))?;
    spec.validate().map_err(|e| Failure::config(format!("spec: {e}")))?;
    let root = out
        .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let dir = generate_synthetic_dataset(&spec, &root)?;
    log_event("done", json!({ "dataset": dir, "records": spec.records }));
    Ok(())
}

pub fn train(args: &RunArgs, forced: Option<SettingKind>) -> Result<(), Failure> {
    let (cfg, out) = resolve(args, forced)?;
    let setting = cfg.setting.ok_or_else(|| Failure::config("setting: one of DT, LFS, FT is required"))?;
    let config_echo = serde_json::to_value(&cfg)?;
    let seed = cfg.train.seed;
    let mut audit = Audit::default();
    match setting {
        SettingKind::LFS | SettingKind::FT => {
            let pretrained = if setting == SettingKind::FT { Some(load_checkpoint(&cfg)?) } else { None };
            let (model_cfg, pre) = match &pretrained {
                Some(m) => (m.config().clone(), m.preprocess.clone()),
                None => (cfg.model.clone(), cfg.preprocess.clone()),
            };
            let target = cfg.target_name()?;
            let records = load_prepared(&cfg, &target, &model_cfg, &pre)?;
            let init = |fold: usize| match &pretrained {
                Some(m) => Ok(m.clone()),
                None => Ok(Model::new(&model_cfg, &pre, seed.wrapping_add(100 + fold as u64))?),
            };
            let tag = format!("{setting:?}").to_lowercase();
            let cv = cross_validate(&tag, &records, cfg.folds, &init, &cfg.train, &mut audit, &mut pass_logger(tag.clone()))?;
            for f in &cv.folds {
                f.model.save(&out.join("checkpoints").join(format!("fold{}", f.fold)))?;
            }
            write_predictions(&out.join("hypnograms"), &cv.predictions)?;
            let history = cv.folds.iter().map(|f| f.history.clone()).collect();
            let report = EvaluationReport::new(config_echo, &cv.report, &cv.predictions, history, audit.entries.clone())?;
            finish(&out, &report, &audit)
        }
        SettingKind::DT => {
            let target = cfg.target_name()?;
            if cfg.sources.contains(&target) {
                return Err(Failure::config(format!("target {target:?} is also a source")));
            }
            let mut sources = Vec::new();
            for s in &cfg.sources {
                sources.push(load_prepared(&cfg, s, &cfg.model, &cfg.preprocess)?);
            }
            let target_records = load_prepared(&cfg, &target, &cfg.model, &cfg.preprocess)?;
            let target_refs: Vec<&PreparedRecord> = target_records.iter().collect();
            let init = Model::new(&cfg.model, &cfg.preprocess, seed.wrapping_add(100))?;
            let mut log = pass_logger("dt".into());
            let dt = direct_transfer("dt", &sources, &target_refs, init, &cfg.train, &mut audit, &mut |s| log(0, s))?;
            dt.outcome.model.save(&out.join("checkpoint"))?;
            let used: BTreeSet<String> = dt.train.iter().chain(&dt.validation).cloned().collect();
            let (predictions, f1) = evaluate_pool("dt/evaluate", &dt.outcome.model, &target_refs, &used, &mut audit)?;
            write_predictions(&out.join("hypnograms"), &predictions)?;
            let report = EvaluationReport::new(config_echo, &f1, &predictions, vec![dt.outcome.history.clone()], audit.entries.clone())?;
            finish(&out, &report, &audit)
        }
    }
}

pub fn evaluate(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, out) = resolve(args, None)?;
    let model = load_checkpoint(&cfg)?;
    let target = cfg.target_name()?;
    let records = load_prepared(&cfg, &target, model.config(), &model.preprocess)?;
    let refs: Vec<&PreparedRecord> = records.iter().collect();
    let predictions = predict_records(&model, &refs)?;
    let f1 = pooled_f1(&predictions)?;
    write_predictions(&out.join("hypnograms"), &predictions)?;
    let audit = Audit::default();
    let report = EvaluationReport::new(serde_json::to_value(&cfg)?, &f1, &predictions, Vec::new(), Vec::new())?;
    finish(&out, &report, &audit)
}

pub fn transfer_matrix(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, out) = resolve(args, None)?;
    if cfg.datasets.len() < 2 {
        return Err(Failure::config("transfer-matrix needs at least two datasets"));
    }
    let seed = cfg.train.seed;
    let names: Vec<String> = cfg.datasets.iter().map(|d| d.resolved_name()).collect();
    let mut data = Vec::new();
    for n in &names {
        data.push(load_prepared(&cfg, n, &cfg.model, &cfg.preprocess)?);
    }
    let mut audit = Audit::default();
    let n = names.len();
    let mut f1 = vec![vec![0.0; n]; n];
    let mut lfs = vec![0.0; n];
    for i in 0..n {
        let init = |fold: usize| Ok(Model::new(&cfg.model, &cfg.preprocess, seed.wrapping_add(100 + fold as u64))?);
        let run = format!("transfer/{}/lfs", names[i]);
        let cv = cross_validate(&run, &data[i], cfg.folds, &init, &cfg.train, &mut audit, &mut pass_logger(run.clone()))?;
        lfs[i] = cv.report.macro_f1;
        f1[i][i] = lfs[i];

        let refs: Vec<&PreparedRecord> = data[i].iter().collect();
        let (train, val) = subject_holdout(&refs, cfg.train.validation_fraction, seed)?;
        let run = format!("transfer/{}/full", names[i]);
        let mut log = pass_logger(run);
        let sampling = cfg.train.channel_sampling.unwrap_or(false);
        let outcome = train_model(
            Model::new(&cfg.model, &cfg.preprocess, seed.wrapping_add(99))?,
            std::slice::from_ref(&train),
            &val,
            &cfg.train,
            sampling,
            &mut |s| log(0, s),
        )?;
        let used: BTreeSet<String> = train.iter().chain(&val).map(|r| r.id.clone()).collect();
        for j in (0..n).filter(|&j| j != i) {
            let pool: Vec<&PreparedRecord> = data[j].iter().collect();
            let run = format!("transfer/{}->{}", names[i], names[j]);
            f1[i][j] = evaluate_pool(&run, &outcome.model, &pool, &used, &mut audit)?.1.macro_f1;
            log_event("transfer", json!({ "source": names[i], "target": names[j], "macro_f1": f1[i][j] }));
        }
    }
    let report = transfer_metrics(&names, &f1, &lfs)?;
    fs::write(
        out.join("transfer.json"),
        serde_json::to_string_pretty(&json!({ "config": cfg, "report": report, "audit": audit.entries }))?,
    )?;
    fs::write(out.join("transfer.csv"), report.to_csv())?;
    fs::write(out.join("audit.jsonl"), audit.to_jsonl())?;
    log_event("done", json!({ "datasets": names, "audit_passed": audit.all_passed(), "out": out }));
    Ok(())
}

pub fn sweep(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, out) = resolve(args, None)?;
    let sc = cfg.sweep.clone().ok_or_else(|| Failure::config("sweep: section missing"))?;
    let pretrained = match sc.grid {
        SweepGrid::FinetuneSize(_) => Some(load_checkpoint(&cfg)?),
        _ => None,
    };
    let (model_cfg, pre) = match &pretrained {
        Some(m) => (m.config().clone(), m.preprocess.clone()),
        None => (cfg.model.clone(), cfg.preprocess.clone()),
    };
    let target = cfg.target_name()?;
    let records = load_prepared(&cfg, &target, &model_cfg, &pre)?;
    let setup = SweepSetup {
        target: &records,
        model: &model_cfg,
        preprocess: &pre,
        train: cfg.train.clone(),
        repetitions: sc.repetitions,
        evaluation_fraction: sc.evaluation_fraction,
        lfs_baseline: sc.lfs_baseline,
        pretrained: pretrained.as_ref(),
    };
    let mut audit = Audit::default();
    let report = run_sweep(&setup, &sc.grid, &mut audit, &mut |point, rep, s| {
        log_event(
            "pass",
            json!({ "run": format!("sweep/{point}"), "repetition": rep, "pass": s.pass,
                    "train_loss": s.train_loss, "val_accuracy": s.val_accuracy, "seconds": s.seconds }),
        )
    })?;
    fs::write(
        out.join("sweep.json"),
        serde_json::to_string_pretty(&json!({ "config": cfg, "report": report, "audit": audit.entries }))?,
    )?;
    fs::write(out.join("sweep.csv"), report.to_csv())?;
    fs::write(out.join("audit.jsonl"), audit.to_jsonl())?;
    log_event("done", json!({ "rows": report.rows.len(), "audit_passed": audit.all_passed(), "out": out }));
    Ok(())
}

pub fn gradcheck(config: Option<&Path>, out: Option<PathBuf>, seed: u64) -> Result<(), Failure> {
    let model_cfg: ModelConfig = match config {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Failure::config(format!("model config: {e}")))?,
        None => reduced_config(),
    };
    let entries = gradient_suite(&model_cfg, seed)?;
    let worst = entries
        .iter()
        .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
        .ok_or_else(|| Failure::data("gradient suite produced no checks"))?;
    let passed = entries.iter().all(|e| e.report.passed);
    let rows: Vec<serde_json::Value> = entries
        .iter()
        .map(|e| {
            json!({ "name": e.name, "max_rel_error": e.report.max_rel_error, "checked": e.report.checked,
                    "analytic": e.report.analytic, "numeric": e.report.numeric, "passed": e.report.passed })
        })
        .collect();
    let summary = json!({
        "model": model_cfg, "seed": seed, "tolerance": GRADCHECK_TOLERANCE, "checks": entries.len(),
        "worst": { "name": worst.name, "max_rel_error": worst.report.max_rel_error }, "passed": passed,
    });
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("gradcheck.json"), serde_json::to_string_pretty(&json!({ "summary": summary, "checks": rows }))?)?;
    }
    log_event("done", summary);
    if passed {
        Ok(())
    } else {
        Err(Failure {
            code: 4,
            message: format!("gradient check {} failed: relative error {:.3e}", worst.name, worst.report.max_rel_error),
        })
    }
}
