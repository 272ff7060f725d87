//! Train, predict, score and report for one configured run, plus late
//! fusion over finished runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use memotion::checkpoint::{load_model, save_model};
use memotion::dataset::{load_manifest, MemeSample};
use memotion::encoders::BackboneRegistry;
use memotion::evaluation::{
    baseline, macro_f1, majority_macro_f1, report_table, task_score, PredictionTable, Report, RunResult, TaskScore,
};
use memotion::fusion::{late_fuse, FusionStrategy};
use memotion::model::{build_model, ImageEncoderSpec, Model, ModelSpec, TextEncoderSpec};
use memotion::pipeline::Featurizer;
use memotion::textpipe::Vocab;
use memotion::training::{argmax, predict, train, TrainHistory};
use memotion::{Error, Task, TaskGroup};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{io, CliError, CliResult};
use crate::prepare::{TEST_MANIFEST, TRAIN_MANIFEST, VAL_MANIFEST, VOCAB};
use crate::staging::Staging;

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const HISTORY: &str = "history.jsonl";
pub const PREDICTIONS: &str = "predictions.csv";
pub const SCORES: &str = "scores.json";
pub const RESULT: &str = "result.json";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const RUN_META: &str = "run_meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub macro_f1: f64,
    /// Score of always predicting the most frequent gold class.
    pub majority_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// `test` or `validation`.
    pub eval_set: String,
    pub samples: usize,
    pub tasks: BTreeMap<Task, TaskEntry>,
    /// Only groups whose every subtask was predicted.
    pub groups: BTreeMap<TaskGroup, TaskScore>,
}

impl Scores {
    pub fn triple(&self) -> [Option<f64>; 3] {
        TaskGroup::ALL.map(|g| self.groups.get(&g).map(|s| s.aggregate))
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub history: Option<TrainHistory>,
    pub scores: Scores,
    pub result: RunResult,
}

/// The split produced by `prepare`.
pub struct Prepared {
    pub train: Vec<MemeSample>,
    pub validation: Vec<MemeSample>,
    pub eval: Vec<MemeSample>,
    pub eval_set: &'static str,
    pub vocab: Vocab,
}

pub fn load_prepared(cfg: &ExperimentConfig) -> CliResult<Prepared> {
    let dir = cfg.prepared_dir();
    if !dir.join(TRAIN_MANIFEST).is_file() {
        return Err(Error::Data(format!("{} holds no prepared split; run `prepare` first", dir.display())).into());
    }
    let train = load_manifest(dir.join(TRAIN_MANIFEST))?;
    let validation = load_manifest(dir.join(VAL_MANIFEST))?;
    let test = dir.join(TEST_MANIFEST);
    let (eval, eval_set) = if test.is_file() {
        (load_manifest(test)?, "test")
    } else {
        (validation.clone(), "validation")
    };
    let vocab = Vocab::load(dir.join(VOCAB))?;
    Ok(Prepared {
        train,
        validation,
        eval,
        eval_set,
        vocab,
    })
}

/// Row labels derived from the model when the config gives none.
pub fn run_labels(cfg: &ExperimentConfig, spec: Option<&ModelSpec>) -> (String, String, String) {
    let (model, modality, fusion) = match spec {
        Some(spec) => {
            let text = match &spec.text {
                TextEncoderSpec::None => None,
                TextEncoderSpec::BiLstm(_) => Some("BiLSTM".to_string()),
                TextEncoderSpec::Pretrained(c) => Some(c.backbone.clone()),
            };
            let image = match &spec.image {
                ImageEncoderSpec::None => None,
                ImageEncoderSpec::Cnn(_) => Some("AlexNet".to_string()),
                ImageEncoderSpec::Pretrained(c) => Some(c.backbone.clone()),
            };
            let mut model = [text.clone(), image.clone()].into_iter().flatten().collect::<Vec<_>>().join("+");
            if spec.mtl {
                model.push_str(" (MTL)");
            }
            let modality = match (text.is_some(), image.is_some()) {
                (true, true) => "Text+Image",
                (true, false) => "Text",
                _ => "Image",
            };
            let fusion = match spec.fusion {
                FusionStrategy::Early => "Early Fusion",
                FusionStrategy::Gmu => "GMU",
                FusionStrategy::Late => "Late Fusion",
                FusionStrategy::None => "-",
            };
            (model, modality.to_string(), fusion.to_string())
        }
        None => ("Ensemble".to_string(), "Text+Image".to_string(), "Late Fusion".to_string()),
    };
    let l = &cfg.labels;
    (
        l.model.clone().unwrap_or(model),
        l.modality.clone().unwrap_or(modality),
        l.fusion.clone().unwrap_or(fusion),
    )
}

/// Per-task macro F1 against gold, and the group aggregates the predicted
/// tasks allow.
pub fn score(table: &PredictionTable, gold: &[MemeSample], eval_set: &str) -> CliResult<Scores> {
    let ids: Vec<String> = gold.iter().map(|s| s.id.clone()).collect();
    let labels: Vec<_> = gold.iter().map(|s| s.labels).collect();
    let position: BTreeMap<&str, usize> = table.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut tasks = BTreeMap::new();
    for (&task, classes) in &table.columns {
        let mut y_pred = Vec::with_capacity(gold.len());
        for id in &ids {
            let &row = position
                .get(id.as_str())
                .ok_or_else(|| Error::Evaluation(format!("no prediction for sample `{id}`")))?;
            y_pred.push(classes[row]);
        }
        let y_true: Vec<usize> = labels.iter().map(|l| task.label(l)).collect();
        tasks.insert(
            task,
            TaskEntry {
                macro_f1: macro_f1(&y_true, &y_pred, task.num_classes())?,
                majority_macro_f1: majority_macro_f1(&y_true, task.num_classes())?,
            },
        );
    }
    let mut groups = BTreeMap::new();
    for group in TaskGroup::ALL {
        if group.subtasks().iter().all(|t| table.columns.contains_key(t)) {
            groups.insert(group, task_score(group, table, &ids, &labels)?);
        }
    }
    Ok(Scores {
        eval_set: eval_set.to_string(),
        samples: gold.len(),
        tasks,
        groups,
    })
}

fn write(dir: &Path, name: &str, body: impl AsRef<[u8]>) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| io(&path, e))
}

fn json<T: Serialize>(value: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value).map_err(Error::from)? + "\n")
}

fn write_report(dir: &Path, report: &Report) -> CliResult<()> {
    write(dir, REPORT_TXT, report.to_text())?;
    write(dir, REPORT_CSV, report.to_csv()?)?;
    write(dir, REPORT_JSON, report.to_json()? + "\n")
}

fn write_scored(dir: &Path, table: &PredictionTable, scores: &Scores, result: &RunResult) -> CliResult<()> {
    let mut csv = Vec::new();
    table.write(&mut csv)?;
    write(dir, PREDICTIONS, csv)?;
    write(dir, SCORES, json(scores)?)?;
    write(dir, RESULT, json(result)?)?;
    write_report(dir, &report_table(std::slice::from_ref(result), &[baseline()]))
}

fn run_meta(cfg: &ExperimentConfig, prepared: &Prepared, extra: serde_json::Value) -> CliResult<serde_json::Value> {
    let mut meta = serde_json::json!({
        "name": cfg.name,
        "toolkit": "memotion",
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": cfg.digest()?,
        "seeds": {
            "run": cfg.seed,
            "split": cfg.split.seed,
            "data": cfg.data.synthetic.as_ref().map(|s| s.seed),
        },
        "samples": {
            "train": prepared.train.len(),
            "validation": prepared.validation.len(),
            "eval": prepared.eval.len(),
            "eval_set": prepared.eval_set,
        },
        "config": cfg,
    });
    if let (Some(m), serde_json::Value::Object(e)) = (meta.as_object_mut(), extra) {
        m.extend(e);
    }
    Ok(meta)
}

/// Arg-max predictions of `model` on `samples`.
fn predictions_of(model: &Model, vocab: Option<Vocab>, samples: &[MemeSample], batch: usize) -> CliResult<PredictionTable> {
    let set = Featurizer::for_model(model, vocab)?.encode(samples)?;
    let preds = predict(model, &set, batch)?;
    let mut table = PredictionTable::new(set.ids.clone());
    for (task, classes) in preds.tasks.iter().zip(preds.classes) {
        table.insert(*task, classes)?;
    }
    Ok(table)
}

/// Fills the vocabulary size of a BiLSTM text encoder.
pub fn resolved_spec(cfg: &ExperimentConfig, vocab: &Vocab) -> CliResult<ModelSpec> {
    let mut spec = cfg
        .model
        .clone()
        .ok_or_else(|| CliError::Config("no `[model]` table".into()))?;
    if let TextEncoderSpec::BiLstm(c) = &mut spec.text {
        c.vocab_size = vocab.len();
    }
    Ok(spec)
}

/// Trains on the prepared split, predicts the evaluation set and writes
/// checkpoint, history, predictions, scores, report and run metadata into
/// the output directory. Nothing is left behind on failure.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<RunSummary> {
    if cfg.late.is_some() {
        return run_late(cfg);
    }
    let prepared = load_prepared(cfg)?;
    let spec = resolved_spec(cfg, &prepared.vocab)?;
    let mut model = build_model(&spec, cfg.seed)?;
    let featurizer = Featurizer::for_model(&model, Some(prepared.vocab.clone()))?;
    let train_set = featurizer.encode(&prepared.train)?;
    let val_set = featurizer.encode(&prepared.validation)?;
    let history = train(&mut model, &train_set, &val_set, &cfg.train)?;
    log::info!(
        "stopped after epoch {} ({:?}); best epoch {}",
        history.stop_epoch,
        history.stop_reason,
        history.best_epoch
    );

    let table = predictions_of(&model, Some(prepared.vocab.clone()), &prepared.eval, cfg.train.batch_size)?;
    let scores = score(&table, &prepared.eval, prepared.eval_set)?;
    let (m, modality, fusion) = run_labels(cfg, Some(&spec));
    let result = RunResult::new(&m, &modality, &fusion, scores.triple());

    let staging = Staging::new(&cfg.output_dir, "run")?;
    let out = staging.path();
    save_model(&model, out.join(CHECKPOINT))?;
    prepared.vocab.save(out.join(VOCAB))?;
    write(out, HISTORY, history.to_jsonl()?)?;
    write_scored(out, &table, &scores, &result)?;
    let meta = run_meta(
        cfg,
        &prepared,
        serde_json::json!({
            "best_epoch": history.best_epoch,
            "stop_epoch": history.stop_epoch,
            "trainable_parameters": model.params.num_trainable(),
        }),
    )?;
    write(out, RUN_META, json(&meta)?)?;
    staging.commit_files(&cfg.output_dir)?;
    Ok(RunSummary {
        dir: cfg.output_dir.clone(),
        history: Some(history),
        scores,
        result,
    })
}

/// A finished run loaded back from its directory.
pub struct SavedRun {
    pub model: Model,
    pub vocab: Option<Vocab>,
}

pub fn load_run(dir: &Path) -> CliResult<SavedRun> {
    let model = load_model(dir.join(CHECKPOINT), &BackboneRegistry::with_stubs())?;
    let vocab_path = dir.join(VOCAB);
    let vocab = if vocab_path.is_file() {
        Some(Vocab::load(vocab_path)?)
    } else {
        None
    };
    Ok(SavedRun { model, vocab })
}

/// Weighted probability average of several runs, per task and sample.
pub fn late_predictions(runs: &[SavedRun], weights: &[f64], samples: &[MemeSample], batch: usize) -> CliResult<PredictionTable> {
    let tasks = runs[0].model.tasks().to_vec();
    if let Some(r) = runs.iter().find(|r| r.model.tasks() != tasks.as_slice()) {
        return Err(Error::InvalidArgument(format!(
            "late fusion needs identical task lists; got {:?} and {:?}",
            tasks,
            r.model.tasks()
        ))
        .into());
    }
    let mut probs = Vec::with_capacity(runs.len());
    for run in runs {
        let set = Featurizer::for_model(&run.model, run.vocab.clone())?.encode(samples)?;
        probs.push(predict(&run.model, &set, batch)?.probs);
    }
    let mut table = PredictionTable::new(samples.iter().map(|s| s.id.clone()).collect());
    for (t, &task) in tasks.iter().enumerate() {
        let mut classes = Vec::with_capacity(samples.len());
        for i in 0..samples.len() {
            let rows: Vec<Vec<f64>> = probs.iter().map(|p| p[t].row(i).to_vec()).collect();
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            classes.push(argmax(&late_fuse(&refs, weights)?));
        }
        table.insert(task, classes)?;
    }
    Ok(table)
}

fn run_late(cfg: &ExperimentConfig) -> CliResult<RunSummary> {
    let late = cfg.late.as_ref().expect("late config");
    let prepared = load_prepared(cfg)?;
    let runs = late.runs.iter().map(|d| load_run(d)).collect::<CliResult<Vec<_>>>()?;
    let table = late_predictions(&runs, &late.weights(), &prepared.eval, cfg.train.batch_size)?;
    let scores = score(&table, &prepared.eval, prepared.eval_set)?;
    let (m, modality, fusion) = run_labels(cfg, None);
    let result = RunResult::new(&m, &modality, &fusion, scores.triple());

    let staging = Staging::new(&cfg.output_dir, "run")?;
    let out = staging.path();
    write_scored(out, &table, &scores, &result)?;
    let members: Vec<String> = late.runs.iter().map(|p| p.display().to_string()).collect();
    let meta = run_meta(cfg, &prepared, serde_json::json!({ "late_runs": members, "late_weights": late.weights() }))?;
    write(out, RUN_META, json(&meta)?)?;
    staging.commit_files(&cfg.output_dir)?;
    Ok(RunSummary {
        dir: cfg.output_dir.clone(),
        history: None,
        scores,
        result,
    })
}

/// Predictions of the saved checkpoint (or late ensemble) on the evaluation
/// set, written to the output directory.
pub fn run_predict(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let prepared = load_prepared(cfg)?;
    let table = match &cfg.late {
        Some(late) => {
            let runs = late.runs.iter().map(|d| load_run(d)).collect::<CliResult<Vec<_>>>()?;
            late_predictions(&runs, &late.weights(), &prepared.eval, cfg.train.batch_size)?
        }
        None => {
            let run = load_run(&cfg.output_dir)?;
            predictions_of(&run.model, run.vocab, &prepared.eval, cfg.train.batch_size)?
        }
    };
    let mut csv = Vec::new();
    table.write(&mut csv)?;
    write(&cfg.output_dir, PREDICTIONS, csv)?;
    Ok(cfg.output_dir.join(PREDICTIONS))
}

/// Scores the prediction file in the output directory against the
/// evaluation set.
pub fn run_evaluate(cfg: &ExperimentConfig) -> CliResult<Scores> {
    let prepared = load_prepared(cfg)?;
    let table = PredictionTable::load(cfg.output_dir.join(PREDICTIONS))?;
    let scores = score(&table, &prepared.eval, prepared.eval_set)?;
    let (m, modality, fusion) = run_labels(cfg, cfg.model.as_ref());
    let result = RunResult::new(&m, &modality, &fusion, scores.triple());
    let staging = Staging::new(&cfg.output_dir, "eval")?;
    write(staging.path(), SCORES, json(&scores)?)?;
    write(staging.path(), RESULT, json(&result)?)?;
    write_report(staging.path(), &report_table(std::slice::from_ref(&result), &[baseline()]))?;
    staging.commit_files(&cfg.output_dir)?;
    Ok(scores)
}

/// Collects the results of `runs` into one table under `out`.
pub fn run_report(runs: &[PathBuf], out: &Path) -> CliResult<Report> {
    let mut results = Vec::with_capacity(runs.len());
    for dir in runs {
        let path = dir.join(RESULT);
        let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        results.push(serde_json::from_str::<RunResult>(&text).map_err(Error::from)?);
    }
    let report = report_table(&results, &[baseline()]);
    fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let staging = Staging::new(out, "report")?;
    write_report(staging.path(), &report)?;
    staging.commit_files(out)?;
    Ok(report)
}
