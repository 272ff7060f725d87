use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::TaskGroup;

/// One row of the comparison table. Missing task scores render as `-`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: String,
    pub modality: String,
    pub fusion: String,
    pub scores: BTreeMap<TaskGroup, f64>,
}

impl RunResult {
    pub fn new(model: &str, modality: &str, fusion: &str, scores: [Option<f64>; 3]) -> Self {
        RunResult {
            model: model.into(),
            modality: modality.into(),
            fusion: fusion.into(),
            scores: TaskGroup::ALL
                .iter()
                .zip(scores)
                .filter_map(|(&g, s)| s.map(|s| (g, s)))
                .collect(),
        }
    }
}

/// The shared task's published baseline.
pub fn baseline() -> RunResult {
    RunResult::new("Baseline Results", "-", "-", [Some(0.218), Some(0.500), Some(0.301)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(flatten)]
    pub run: RunResult,
    /// Task groups where this row holds the column best.
    pub best: Vec<TaskGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

/// Baselines first, then runs. A score is flagged best when it equals the
/// column maximum at the printed precision, so ties are all flagged.
pub fn report_table(runs: &[RunResult], baselines: &[RunResult]) -> Report {
    let all: Vec<&RunResult> = baselines.iter().chain(runs).collect();
    let shown = |v: f64| (v * 1000.0).round() as i64;
    let best: BTreeMap<TaskGroup, i64> = TaskGroup::ALL
        .iter()
        .filter_map(|&g| all.iter().filter_map(|r| r.scores.get(&g)).map(|&v| shown(v)).max().map(|m| (g, m)))
        .collect();
    Report {
        rows: all
            .into_iter()
            .map(|r| ReportRow {
                run: r.clone(),
                best: TaskGroup::ALL
                    .iter()
                    .copied()
                    .filter(|g| r.scores.get(g).map(|&v| shown(v)) == best.get(g).copied())
                    .collect(),
            })
            .collect(),
    }
}

const HEADER: [&str; 6] = ["Model", "Modality", "Fusion Strategy", "Task A", "Task B", "Task C"];

impl Report {
    fn cells(&self, mark_best: bool) -> Vec<[String; 6]> {
        self.rows
            .iter()
            .map(|row| {
                let score = |g: TaskGroup| match row.run.scores.get(&g) {
                    None => "-".to_string(),
                    Some(v) if mark_best && row.best.contains(&g) => format!("{v:.3}*"),
                    Some(v) => format!("{v:.3}"),
                };
                [
                    row.run.model.clone(),
                    row.run.modality.clone(),
                    row.run.fusion.clone(),
                    score(TaskGroup::A),
                    score(TaskGroup::B),
                    score(TaskGroup::C),
                ]
            })
            .collect()
    }

    /// Aligned columns; `*` marks the best score of each task column.
    pub fn to_text(&self) -> String {
        let cells = self.cells(true);
        let mut widths = HEADER.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |row: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in row.iter().zip(widths).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                if i < 3 {
                    let _ = write!(s, "{c:<w$}");
                } else {
                    let _ = write!(s, "{c:>w$}");
                }
            }
            s.trim_end().to_string()
        };
        let mut out = line(&HEADER.map(String::from));
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 10));
        out.push('\n');
        for row in &cells {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    /// Comma-separated, with `best_a/best_b/best_c` flag columns.
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Evaluation(e.to_string());
        let mut header: Vec<&str> = HEADER.to_vec();
        header.extend(["Best A", "Best B", "Best C"]);
        wtr.write_record(&header).map_err(err)?;
        for (row, cells) in self.rows.iter().zip(self.cells(false)) {
            let mut rec = cells.to_vec();
            rec.extend(TaskGroup::ALL.iter().map(|g| row.best.contains(g).to_string()));
            wtr.write_record(&rec).map_err(err)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Evaluation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
