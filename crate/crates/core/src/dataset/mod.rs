//! Meme samples, manifests, train/validation splitting and class balancing.

mod manifest;
mod synthetic;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::rng_stream;
use crate::tasks::{LabelColumn, Task};

pub use manifest::{load_manifest, read_manifest_csv, read_manifest_jsonl, write_manifest};
pub use synthetic::{generate_synthetic, ColumnSignal, SignalKind, SignalSpec, PALETTE};

/// The full label set of one meme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LabelValues {
    pub sentiment: u8,
    pub humor: u8,
    pub sarcasm: u8,
    pub offence: u8,
    pub motivation: u8,
}

impl LabelValues {
    /// Checks every column against its range and returns the first violation
    /// as `(column, allowed range)`.
    pub fn validate(&self) -> std::result::Result<(), (LabelColumn, i64)> {
        for col in LabelColumn::ALL {
            let v = col.get(self);
            if v as usize >= col.cardinality() {
                return Err((col, v as i64));
            }
        }
        Ok(())
    }
}

/// An 8-bit image held in memory, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelGrid {
    pub width: usize,
    pub height: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: usize,
    pub data: Vec<u8>,
}

impl PixelGrid {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("{channels} channels; expected 1 or 3")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "{} bytes for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(PixelGrid {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled_rgb(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        PixelGrid {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// Where a sample's image lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageRef {
    Path(PathBuf),
    Pixels(Arc<PixelGrid>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemeSample {
    pub id: String,
    /// OCR text; may be empty.
    pub text: String,
    pub image: ImageRef,
    pub labels: LabelValues,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub task: Task,
    /// Every class of the task is present, absent ones with count 0.
    pub counts: BTreeMap<usize, usize>,
}

impl ClassDistribution {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn count(&self, class: usize) -> usize {
        self.counts.get(&class).copied().unwrap_or(0)
    }

    pub fn as_vec(&self) -> Vec<usize> {
        (0..self.task.num_classes()).map(|c| self.count(c)).collect()
    }
}

pub fn class_distribution(dataset: &[MemeSample], task: Task) -> ClassDistribution {
    let mut counts: BTreeMap<usize, usize> = (0..task.num_classes()).map(|c| (c, 0)).collect();
    for sample in dataset {
        *counts.entry(task.label(&sample.labels)).or_default() += 1;
    }
    ClassDistribution { task, counts }
}

/// Per-class loss multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    /// Classes with no samples; they get weight 0.
    pub empty_classes: Vec<usize>,
}

impl ClassWeights {
    pub fn uniform(num_classes: usize) -> Self {
        ClassWeights {
            weights: vec![1.0; num_classes],
            empty_classes: Vec::new(),
        }
    }

    pub fn has_warning(&self) -> bool {
        !self.empty_classes.is_empty()
    }
}

/// Balanced inverse-frequency weights `N / (K · n_c)`.
pub fn compute_class_weights(dist: &ClassDistribution) -> Result<ClassWeights> {
    let counts = dist.as_vec();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Data(format!(
            "cannot weight classes of `{}`: every count is zero",
            dist.task
        )));
    }
    let k = counts.len() as f64;
    let mut empty_classes = Vec::new();
    let weights = counts
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            if n == 0 {
                empty_classes.push(c);
                0.0
            } else {
                total as f64 / (k * n as f64)
            }
        })
        .collect();
    if !empty_classes.is_empty() {
        log::warn!(
            "task `{}`: classes {:?} have no samples; weight set to 0",
            dist.task,
            empty_classes
        );
    }
    Ok(ClassWeights {
        weights,
        empty_classes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<MemeSample>,
    pub validation: Vec<MemeSample>,
    pub val_fraction: f64,
    pub seed: u64,
    /// Whether the split was stratified on the sentiment label.
    pub stratified: bool,
}

/// Number of validation samples for a split of `n` samples.
pub fn validation_size(n: usize, val_fraction: f64) -> usize {
    (val_fraction * n as f64).round() as usize
}

/// Seeded train/validation split. With `stratify`, each sentiment class
/// contributes to the validation set in proportion to its size (largest
/// remainder rounding), so the total is exactly `round(val_fraction · N)`.
/// Both sides keep the input order.
pub fn split_train_val(
    dataset: &[MemeSample],
    val_fraction: f64,
    seed: u64,
    stratify: bool,
) -> Result<DatasetSplit> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction {val_fraction} outside (0, 1)"
        )));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::Data(format!("cannot split {n} samples")));
    }
    let n_val = validation_size(n, val_fraction);
    if n_val == 0 || n_val == n {
        return Err(Error::invalid(format!(
            "fraction {val_fraction} of {n} samples leaves one side empty"
        )));
    }
    let mut rng = rng_stream(seed, 0);
    let strata: Vec<Vec<usize>> = if stratify {
        let mut groups = vec![Vec::new(); Task::Sentiment.num_classes()];
        for (i, s) in dataset.iter().enumerate() {
            groups[Task::Sentiment.label(&s.labels)].push(i);
        }
        groups
    } else {
        vec![(0..n).collect()]
    };
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let quotas = largest_remainder(&sizes, n_val);

    let mut in_val = vec![false; n];
    for (mut group, quota) in strata.into_iter().zip(quotas) {
        group.shuffle(&mut rng);
        for &i in &group[..quota] {
            in_val[i] = true;
        }
    }
    let (mut train, mut validation) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (sample, val) in dataset.iter().zip(in_val) {
        if val {
            validation.push(sample.clone());
        } else {
            train.push(sample.clone());
        }
    }
    Ok(DatasetSplit {
        train,
        validation,
        val_fraction,
        seed,
        stratified: stratify,
    })
}

/// Splits `total` over groups proportionally to `sizes`, never exceeding a
/// group's size. Remainders go to the largest fractional parts, ties to the
/// lower group index.
fn largest_remainder(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let exact: Vec<f64> = sizes
        .iter()
        .map(|&s| total as f64 * s as f64 / n as f64)
        .collect();
    let mut quotas: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut left = total - quotas.iter().sum::<usize>();
    for &g in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if quotas[g] < sizes[g] {
            quotas[g] += 1;
            left -= 1;
        }
    }
    quotas
}

/// Indices of a ratio-1 resampling of `labels`: every original index once,
/// in order, followed by uniform draws with replacement from each minority
/// class until it reaches the majority count.
pub fn oversample_indices(labels: &[usize], num_classes: usize, seed: u64) -> Result<Vec<usize>> {
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::invalid(format!("label {y} outside {num_classes} classes")));
        }
        by_class[y].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!(
            "cannot oversample: class {c} has no samples"
        )));
    }
    let majority = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = rng_stream(seed, 1);
    let mut out: Vec<usize> = (0..labels.len()).collect();
    for members in &by_class {
        for _ in members.len()..majority {
            out.push(members[rng.gen_range(0..members.len())]);
        }
    }
    Ok(out)
}

/// Duplicates minority-class samples until every class of `task` matches
/// the majority count. Copies get the id `<original>~<k>` so ids stay unique.
pub fn oversample_to_balance(
    dataset: &[MemeSample],
    task: Task,
    seed: u64,
) -> Result<Vec<MemeSample>> {
    let labels: Vec<usize> = dataset.iter().map(|s| task.label(&s.labels)).collect();
    let indices = oversample_indices(&labels, task.num_classes(), seed)?;
    let mut out: Vec<MemeSample> = dataset.to_vec();
    for (k, &i) in indices[dataset.len()..].iter().enumerate() {
        let mut copy = dataset[i].clone();
        copy.id = format!("{}~{}", copy.id, k + 1);
        out.push(copy);
    }
    Ok(out)
}
