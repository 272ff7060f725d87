//! Class-weighted cross entropy, the epoch loop with early stopping on
//! validation loss, and inference.

mod optim;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, PROB_FLOOR};
use crate::dataset::{compute_class_weights, oversample_indices, ClassDistribution, ClassWeights};
use crate::error::{Error, Result};
use crate::evaluation::macro_f1;
use crate::layers::Mode;
use crate::model::Model;
use crate::params::rng_stream;
use crate::pipeline::EncodedSet;
use crate::tasks::Task;

pub use optim::{AdamConfig, Optimizer, OptimizerKind};

/// Mean over rows of `-w[y] · ln(max(p[y], 1e-12))`.
pub fn weighted_cross_entropy(probs: ArrayView2<'_, f64>, labels: &[usize], class_weights: &[f64]) -> Result<f64> {
    let (n, k) = probs.dim();
    if n != labels.len() || k != class_weights.len() {
        return Err(Error::shape(format!(
            "{n}x{k} probabilities with {} labels and {} weights",
            labels.len(),
            class_weights.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {bad} outside {k} classes")));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -class_weights[y] * probs[[i, y]].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imbalance {
    ClassWeights,
    Oversample,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStoppingConfig {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStoppingConfig {
    fn default() -> Self {
        EarlyStoppingConfig {
            patience: 3,
            min_delta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// The optimiser's default when absent.
    pub learning_rate: Option<f64>,
    pub imbalance: Imbalance,
    pub early_stopping: EarlyStoppingConfig,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            learning_rate: None,
            imbalance: Imbalance::ClassWeights,
            early_stopping: EarlyStoppingConfig::default(),
            max_epochs: 50,
            seed: 0,
        }
    }
}

/// Learning rate used with frozen pretrained backbones, for either optimiser.
pub const PRETRAINED_LEARNING_RATE: f64 = 3e-4;

impl TrainConfig {
    /// Defaults for models over pretrained backbones.
    pub fn pretrained(optimizer: OptimizerKind) -> Self {
        TrainConfig {
            optimizer,
            learning_rate: Some(PRETRAINED_LEARNING_RATE),
            ..Default::default()
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| self.optimizer.default_learning_rate())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.early_stopping.patience == 0 || self.max_epochs == 0 {
            return Err(Error::invalid(
                "batch_size, patience and max_epochs must all be at least 1",
            ));
        }
        if !(self.learning_rate() > 0.0) || !(self.early_stopping.min_delta >= 0.0) {
            return Err(Error::invalid("learning rate must be positive and min_delta non-negative"));
        }
        Ok(())
    }
}

/// Stops once the monitored value has failed to improve on the best by more
/// than `min_delta` for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub config: EarlyStoppingConfig,
    pub best: f64,
    pub best_epoch: usize,
    pub wait: usize,
}

impl EarlyStopping {
    pub fn new(config: EarlyStoppingConfig) -> Self {
        EarlyStopping {
            config,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Records epoch `epoch` (1-based). Returns `(improved, stop)`.
    pub fn update(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        if value < self.best - self.config.min_delta {
            self.best = value;
            self.best_epoch = epoch;
            self.wait = 0;
            (true, false)
        } else {
            self.wait += 1;
            (false, self.wait >= self.config.patience)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: BTreeMap<Task, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_epoch: usize,
    pub stop_reason: StopReason,
}

#[derive(Serialize, Deserialize)]
struct HistoryLine {
    #[serde(flatten)]
    record: EpochRecord,
    best: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    stop_reason: Option<StopReason>,
}

impl TrainHistory {
    /// One JSON object per epoch; the best epoch has `"best": true` and the
    /// last carries the stop reason.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for r in &self.epochs {
            let line = HistoryLine {
                record: r.clone(),
                best: r.epoch == self.best_epoch,
                stop_reason: (r.epoch == self.stop_epoch).then_some(self.stop_reason),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io("<history>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(String::from_utf8(buf).expect("json is utf-8"))
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self> {
        let mut epochs = Vec::new();
        let (mut best_epoch, mut stop) = (0, None);
        for line in input.lines() {
            let line = line.map_err(|e| Error::io("<history>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let h: HistoryLine = serde_json::from_str(&line)?;
            if h.best {
                best_epoch = h.record.epoch;
            }
            if h.stop_reason.is_some() {
                stop = h.stop_reason;
            }
            epochs.push(h.record);
        }
        let stop_reason = stop.ok_or_else(|| Error::Training("history has no stop record".into()))?;
        Ok(TrainHistory {
            stop_epoch: epochs.last().map_or(0, |r| r.epoch),
            epochs,
            best_epoch,
            stop_reason,
        })
    }
}

/// Per-task class weights for the chosen imbalance policy, from the
/// training labels.
pub fn task_class_weights(model: &Model, train: &EncodedSet, imbalance: Imbalance) -> Result<Vec<ClassWeights>> {
    model
        .tasks()
        .iter()
        .map(|&task| match imbalance {
            Imbalance::ClassWeights => {
                let mut counts: BTreeMap<usize, usize> = (0..task.num_classes()).map(|c| (c, 0)).collect();
                for y in train.task_labels(task) {
                    *counts.entry(y).or_default() += 1;
                }
                compute_class_weights(&ClassDistribution { task, counts })
            }
            _ => Ok(ClassWeights::uniform(task.num_classes())),
        })
        .collect()
}

/// Sample order for one epoch: the oversampled stream (balanced on the
/// first task) or every index once, shuffled.
pub fn epoch_order(train: &EncodedSet, first_task: Task, imbalance: Imbalance, seed: u64, epoch: usize) -> Result<Vec<usize>> {
    let mut rng = rng_stream(seed, 1000 + epoch as u64);
    let mut order = match imbalance {
        Imbalance::Oversample => oversample_indices(&train.task_labels(first_task), first_task.num_classes(), rng.gen())?,
        _ => (0..train.len()).collect(),
    };
    order.shuffle(&mut rng);
    Ok(order)
}

/// Trains `model` in place and leaves it holding the parameters of the
/// epoch with the lowest validation loss.
pub fn train(model: &mut Model, train: &EncodedSet, val: &EncodedSet, config: &TrainConfig) -> Result<TrainHistory> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Training("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Training("validation set is empty; early stopping needs it".into()));
    }
    let tasks = model.tasks().to_vec();
    let task_weights = model.spec.task_weights();
    let class_weights = task_class_weights(model, train, config.imbalance)?;
    let labels: Vec<Vec<usize>> = tasks.iter().map(|&t| train.task_labels(t)).collect();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate(), &model.params)?;
    let mut stopper = EarlyStopping::new(config.early_stopping);
    let mut best_params = model.params.clone();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let order = epoch_order(train, tasks[0], config.imbalance, config.seed, epoch)?;
        let mut dropout_rng = rng_stream(config.seed, 2000 + epoch as u64);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let inputs = train.gather(batch);
            let mut mode = Mode::train(&mut dropout_rng);
            let (loss, grads) = {
                let mut g = Graph::new(&model.params);
                let probs = model.forward(&mut g, &inputs, &mut mode)?;
                let mut terms = Vec::with_capacity(tasks.len());
                for (t, &p) in probs.iter().enumerate() {
                    let y: Vec<usize> = batch.iter().map(|&i| labels[t][i]).collect();
                    terms.push(g.weighted_nll(p, &y, &class_weights[t].weights)?);
                }
                let total = g.weighted_sum(&terms, &task_weights)?;
                let loss = g.value(total).iter().next().copied().unwrap_or(f64::NAN);
                if !loss.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss {loss} at epoch {epoch}, batch {}",
                        b + 1
                    )));
                }
                (loss, g.backward(total))
            };
            optimizer.step(&mut model.params, &grads);
            for (id, value) in mode.take_buffer_updates() {
                *model.params.get_mut(id) = value;
            }
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / order.len() as f64;
        let (val_loss, val_macro_f1) = validation_metrics(model, val, &task_weights, config.batch_size)?;
        log::info!("epoch {epoch}: train loss {train_loss:.4}, val loss {val_loss:.4}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_macro_f1,
        });
        let (improved, stop) = stopper.update(epoch, val_loss);
        if improved {
            best_params = model.params.clone();
        }
        if stop {
            stop_reason = StopReason::EarlyStopping;
            break;
        }
    }
    model.params = best_params;
    Ok(TrainHistory {
        stop_epoch: epochs.len(),
        epochs,
        best_epoch: stopper.best_epoch,
        stop_reason,
    })
}

/// Unweighted cross entropy (summed over tasks with the task weights) and
/// per-task macro F1.
fn validation_metrics(
    model: &Model,
    val: &EncodedSet,
    task_weights: &[f64],
    batch_size: usize,
) -> Result<(f64, BTreeMap<Task, f64>)> {
    let preds = predict(model, val, batch_size)?;
    let mut loss = 0.0;
    let mut f1 = BTreeMap::new();
    for (t, &task) in model.tasks().iter().enumerate() {
        let y = val.task_labels(task);
        let uniform = vec![1.0; task.num_classes()];
        loss += task_weights[t] * weighted_cross_entropy(preds.probs[t].view(), &y, &uniform)?;
        f1.insert(task, macro_f1(&y, &preds.classes[t], task.num_classes())?);
    }
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite validation loss {loss}")));
    }
    Ok((loss, f1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub tasks: Vec<Task>,
    pub probs: Vec<Array2<f64>>,
    pub classes: Vec<Vec<usize>>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    (1..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
}

/// Inference-mode probabilities and arg-max classes for every sample.
pub fn predict(model: &Model, data: &EncodedSet, batch_size: usize) -> Result<Predictions> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let tasks = model.tasks().to_vec();
    let n = data.len();
    let mut probs: Vec<Array2<f64>> = tasks.iter().map(|t| Array2::zeros((n, t.num_classes()))).collect();
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size) {
        let out = model.predict_proba(&data.gather(chunk))?;
        for (p, o) in probs.iter_mut().zip(out) {
            for (r, &i) in chunk.iter().enumerate() {
                p.row_mut(i).assign(&o.row(r));
            }
        }
    }
    let classes = probs
        .iter()
        .map(|p| p.rows().into_iter().map(|r| argmax(r.as_slice().expect("contiguous row"))).collect())
        .collect();
    Ok(Predictions { tasks, probs, classes })
}
