//! Label columns, subtasks and the three task groups of the meme benchmark.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::LabelValues;
use crate::error::Error;

/// One raw label column of a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelColumn {
    Sentiment,
    Humor,
    Sarcasm,
    Offence,
    Motivation,
}

impl LabelColumn {
    pub const ALL: [LabelColumn; 5] = [
        LabelColumn::Sentiment,
        LabelColumn::Humor,
        LabelColumn::Sarcasm,
        LabelColumn::Offence,
        LabelColumn::Motivation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LabelColumn::Sentiment => "sentiment",
            LabelColumn::Humor => "humor",
            LabelColumn::Sarcasm => "sarcasm",
            LabelColumn::Offence => "offence",
            LabelColumn::Motivation => "motivation",
        }
    }

    /// Number of distinct raw values the column takes.
    pub fn cardinality(self) -> usize {
        match self {
            LabelColumn::Sentiment => 3,
            LabelColumn::Humor | LabelColumn::Sarcasm | LabelColumn::Offence => 4,
            LabelColumn::Motivation => 2,
        }
    }

    pub fn get(self, labels: &LabelValues) -> u8 {
        match self {
            LabelColumn::Sentiment => labels.sentiment,
            LabelColumn::Humor => labels.humor,
            LabelColumn::Sarcasm => labels.sarcasm,
            LabelColumn::Offence => labels.offence,
            LabelColumn::Motivation => labels.motivation,
        }
    }

    pub fn set(self, labels: &mut LabelValues, value: u8) {
        match self {
            LabelColumn::Sentiment => labels.sentiment = value,
            LabelColumn::Humor => labels.humor = value,
            LabelColumn::Sarcasm => labels.sarcasm = value,
            LabelColumn::Offence => labels.offence = value,
            LabelColumn::Motivation => labels.motivation = value,
        }
    }
}

/// A single-label classification subtask.
///
/// Task A is [`Task::Sentiment`]; Task B is the four binary views; Task C the
/// three four-point intensity scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Sentiment,
    Humor,
    Sarcasm,
    Offence,
    Motivation,
    HumorScale,
    SarcasmScale,
    OffenceScale,
}

impl Task {
    /// Canonical order, which is also the prediction-file column order.
    pub const ALL: [Task; 8] = [
        Task::Sentiment,
        Task::Humor,
        Task::Sarcasm,
        Task::Offence,
        Task::Motivation,
        Task::HumorScale,
        Task::SarcasmScale,
        Task::OffenceScale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Sentiment => "sentiment",
            Task::Humor => "humor",
            Task::Sarcasm => "sarcasm",
            Task::Offence => "offence",
            Task::Motivation => "motivation",
            Task::HumorScale => "humor_scale",
            Task::SarcasmScale => "sarcasm_scale",
            Task::OffenceScale => "offence_scale",
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Task::Sentiment => 3,
            Task::Humor | Task::Sarcasm | Task::Offence | Task::Motivation => 2,
            Task::HumorScale | Task::SarcasmScale | Task::OffenceScale => 4,
        }
    }

    pub fn column(self) -> LabelColumn {
        match self {
            Task::Sentiment => LabelColumn::Sentiment,
            Task::Humor | Task::HumorScale => LabelColumn::Humor,
            Task::Sarcasm | Task::SarcasmScale => LabelColumn::Sarcasm,
            Task::Offence | Task::OffenceScale => LabelColumn::Offence,
            Task::Motivation => LabelColumn::Motivation,
        }
    }

    /// Gold class for this subtask. Binary views of the intensity columns are
    /// `value > 0`; motivation is binary already.
    pub fn label(self, labels: &LabelValues) -> usize {
        let raw = self.column().get(labels) as usize;
        match self {
            Task::Humor | Task::Sarcasm | Task::Offence => usize::from(raw > 0),
            _ => raw,
        }
    }

    pub fn group(self) -> TaskGroup {
        match self {
            Task::Sentiment => TaskGroup::A,
            Task::Humor | Task::Sarcasm | Task::Offence | Task::Motivation => TaskGroup::B,
            _ => TaskGroup::C,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

/// The three scored tasks of the shared task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskGroup {
    A,
    B,
    C,
}

impl TaskGroup {
    pub const ALL: [TaskGroup; 3] = [TaskGroup::A, TaskGroup::B, TaskGroup::C];

    pub fn subtasks(self) -> &'static [Task] {
        match self {
            TaskGroup::A => &[Task::Sentiment],
            TaskGroup::B => &[Task::Humor, Task::Sarcasm, Task::Offence, Task::Motivation],
            TaskGroup::C => &[Task::HumorScale, Task::SarcasmScale, Task::OffenceScale],
        }
    }
}

impl fmt::Display for TaskGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskGroup::A => f.write_str("Task A"),
            TaskGroup::B => f.write_str("Task B"),
            TaskGroup::C => f.write_str("Task C"),
        }
    }
}

impl FromStr for TaskGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().trim_start_matches("TASK").trim() {
            "A" => Ok(TaskGroup::A),
            "B" => Ok(TaskGroup::B),
            "C" => Ok(TaskGroup::C),
            _ => Err(Error::UnknownTask(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_views_threshold_at_zero() {
        let labels = LabelValues {
            sentiment: 2,
            humor: 0,
            sarcasm: 3,
            offence: 1,
            motivation: 1,
        };
        assert_eq!(Task::Humor.label(&labels), 0);
        assert_eq!(Task::Sarcasm.label(&labels), 1);
        assert_eq!(Task::Offence.label(&labels), 1);
        assert_eq!(Task::SarcasmScale.label(&labels), 3);
        assert_eq!(Task::Motivation.label(&labels), 1);
    }

    #[test]
    fn names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert!("humour".parse::<Task>().is_err());
        assert_eq!("task b".parse::<TaskGroup>().unwrap(), TaskGroup::B);
    }
}
