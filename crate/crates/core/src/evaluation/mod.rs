//! Macro-F1 scoring, task-level aggregation and prediction files.

mod report;

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::LabelValues;
use crate::error::{Error, Result};
use crate::tasks::{Task, TaskGroup};

pub use report::{baseline, report_table, Report, RunResult};

/// Per-class F1 with every `0/0` taken as 0.
pub fn per_class_f1(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Evaluation(format!(
            "{} gold labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&c| c >= num_classes) {
        return Err(Error::Evaluation(format!("class {bad} outside 0..{num_classes}")));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok((0..num_classes)
        .map(|c| {
            let precision = ratio(tp[c], tp[c] + fp[c]);
            let recall = ratio(tp[c], tp[c] + fn_[c]);
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .collect())
}

/// Unweighted mean of per-class F1 over all `num_classes` classes,
/// including ones absent from both inputs.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<f64> {
    if num_classes == 0 {
        return Err(Error::Evaluation("macro F1 needs at least one class".into()));
    }
    let f1 = per_class_f1(y_true, y_pred, num_classes)?;
    Ok(f1.iter().sum::<f64>() / num_classes as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub group: TaskGroup,
    pub subtasks: Vec<(Task, f64)>,
    /// Mean of the subtask scores.
    pub aggregate: f64,
}

/// Predicted class per sample for some subset of the eight prediction
/// columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionTable {
    pub ids: Vec<String>,
    pub columns: BTreeMap<Task, Vec<usize>>,
}

impl PredictionTable {
    pub fn new(ids: Vec<String>) -> Self {
        PredictionTable {
            ids,
            columns: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, task: Task, classes: Vec<usize>) -> Result<()> {
        if classes.len() != self.ids.len() {
            return Err(Error::Evaluation(format!(
                "{} predictions for `{task}` but {} ids",
                classes.len(),
                self.ids.len()
            )));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c >= task.num_classes()) {
            return Err(Error::Evaluation(format!("`{task}` prediction {bad} out of range")));
        }
        self.columns.insert(task, classes);
        Ok(())
    }

    pub fn write(&self, writer: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let tasks: Vec<Task> = self.columns.keys().copied().collect();
        let err = |e: csv::Error| Error::Evaluation(e.to_string());
        let mut header = vec!["id"];
        header.extend(tasks.iter().map(|t| t.name()));
        wtr.write_record(&header).map_err(err)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(tasks.iter().map(|t| self.columns[t][i].to_string()));
            wtr.write_record(&row).map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::Evaluation(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn read(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let err = |e: csv::Error| Error::Evaluation(e.to_string());
        let header = rdr.headers().map_err(err)?.clone();
        if header.get(0) != Some("id") {
            return Err(Error::Evaluation("prediction file must start with an `id` column".into()));
        }
        let tasks = header
            .iter()
            .skip(1)
            .map(|h| h.parse::<Task>())
            .collect::<Result<Vec<_>>>()?;
        let mut ids = Vec::new();
        let mut cols = vec![Vec::new(); tasks.len()];
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(err)?;
            ids.push(record[0].to_string());
            for (j, col) in cols.iter_mut().enumerate() {
                let v = record[j + 1].trim().parse::<usize>().map_err(|e| {
                    Error::Evaluation(format!("row {}: column `{}`: {e}", row + 1, tasks[j]))
                })?;
                col.push(v);
            }
        }
        let mut table = PredictionTable::new(ids);
        for (task, col) in tasks.into_iter().zip(cols) {
            if table.columns.contains_key(&task) {
                return Err(Error::Evaluation(format!("column `{task}` appears twice")));
            }
            table.insert(task, col)?;
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read(std::fs::File::open(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Scores `group` on gold data: one macro F1 per subtask, then the mean.
/// Predictions must cover exactly the gold ids.
pub fn task_score(
    group: TaskGroup,
    predictions: &PredictionTable,
    gold_ids: &[String],
    gold: &[LabelValues],
) -> Result<TaskScore> {
    if gold_ids.len() != gold.len() {
        return Err(Error::Evaluation("gold ids and labels differ in length".into()));
    }
    let index: HashMap<&str, usize> = predictions
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    if index.len() != predictions.ids.len() {
        return Err(Error::Evaluation("prediction ids are not unique".into()));
    }
    if predictions.ids.len() != gold_ids.len() {
        return Err(Error::Evaluation(format!(
            "{} predictions for {} gold samples",
            predictions.ids.len(),
            gold_ids.len()
        )));
    }
    let rows = gold_ids
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Evaluation(format!("no prediction for sample `{id}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let subtasks = group
        .subtasks()
        .iter()
        .map(|&task| {
            let col = predictions
                .columns
                .get(&task)
                .ok_or_else(|| Error::Evaluation(format!("{group} needs predictions for `{task}`")))?;
            let y_pred: Vec<usize> = rows.iter().map(|&r| col[r]).collect();
            let y_true: Vec<usize> = gold.iter().map(|l| task.label(l)).collect();
            Ok((task, macro_f1(&y_true, &y_pred, task.num_classes())?))
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = subtasks.iter().map(|(_, s)| s).sum::<f64>() / subtasks.len() as f64;
    Ok(TaskScore {
        group,
        subtasks,
        aggregate,
    })
}

/// Macro F1 of always predicting the most frequent class of `labels`;
/// ties go to the lower class.
pub fn majority_macro_f1(labels: &[usize], num_classes: usize) -> Result<f64> {
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        *counts
            .get_mut(y)
            .ok_or_else(|| Error::Evaluation(format!("class {y} outside 0..{num_classes}")))? += 1;
    }
    let best = (0..num_classes).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
    macro_f1(labels, &vec![best; labels.len()], num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        let v = macro_f1(&[0, 0, 1, 1, 2, 2], &[0, 1, 1, 1, 2, 0], 3).unwrap();
        assert!((v - (0.5 + 0.8 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!((macro_f1(&[0, 0], &[0, 0], 3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(macro_f1(&[0], &[0, 1], 2).is_err());
        assert!(macro_f1(&[0], &[2], 2).is_err());
        assert_eq!(macro_f1(&[], &[], 2).unwrap(), 0.0);
    }

    fn gold() -> (Vec<String>, Vec<LabelValues>) {
        let labels = vec![
            LabelValues { sentiment: 2, humor: 3, sarcasm: 0, offence: 1, motivation: 1 },
            LabelValues { sentiment: 0, humor: 0, sarcasm: 2, offence: 0, motivation: 0 },
            LabelValues { sentiment: 1, humor: 1, sarcasm: 1, offence: 0, motivation: 1 },
        ];
        (vec!["a".into(), "b".into(), "c".into()], labels)
    }

    #[test]
    fn perfect_task_b() {
        let (ids, labels) = gold();
        let mut p = PredictionTable::new(ids.clone());
        for t in TaskGroup::B.subtasks() {
            p.insert(*t, labels.iter().map(|l| t.label(l)).collect()).unwrap();
        }
        let s = task_score(TaskGroup::B, &p, &ids, &labels).unwrap();
        assert_eq!(s.aggregate, 1.0);
        assert_eq!(s.subtasks.len(), 4);
        assert!(task_score(TaskGroup::C, &p, &ids, &labels).is_err());
    }

    #[test]
    fn predictions_are_matched_by_id() {
        let (ids, labels) = gold();
        let mut p = PredictionTable::new(vec!["c".into(), "a".into(), "b".into()]);
        p.insert(Task::Sentiment, vec![1, 2, 0]).unwrap();
        assert_eq!(task_score(TaskGroup::A, &p, &ids, &labels).unwrap().aggregate, 1.0);
        let mut q = PredictionTable::new(vec!["c".into(), "a".into(), "x".into()]);
        q.insert(Task::Sentiment, vec![1, 2, 0]).unwrap();
        assert!(task_score(TaskGroup::A, &q, &ids, &labels).is_err());
    }

    #[test]
    fn prediction_file_round_trip() {
        let mut p = PredictionTable::new(vec!["m1".into(), "m2".into()]);
        p.insert(Task::OffenceScale, vec![3, 0]).unwrap();
        p.insert(Task::Sentiment, vec![0, 2]).unwrap();
        p.insert(Task::Motivation, vec![1, 0]).unwrap();
        let mut buf = Vec::new();
        p.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,sentiment,motivation,offence_scale\n"), "{text}");
        assert_eq!(PredictionTable::read(buf.as_slice()).unwrap(), p);
        assert!(PredictionTable::read("id,bogus\nx,1\n".as_bytes()).is_err());
        assert!(PredictionTable::read("id,motivation\nx,2\n".as_bytes()).is_err());
        assert!(p.clone().insert(Task::Humor, vec![1]).is_err());
    }

    #[test]
    fn majority_baseline() {
        assert!((majority_macro_f1(&[0, 0, 1, 2], 3).unwrap() - (2.0 / 3.0) / 3.0).abs() < 1e-12);
    }
}
