//! Data preparation: load or synthesise memes, split, build the vocabulary
//! and write the label distribution table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use memotion::dataset::{
    class_distribution, generate_synthetic, load_manifest, split_train_val, write_manifest, ImageRef, MemeSample,
};
use memotion::encoders::save_png;
use memotion::textpipe::{build_vocab, preprocess_text};
use memotion::{Error, Task};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{io, CliResult};
use crate::staging::Staging;

pub const TRAIN_MANIFEST: &str = "train.csv";
pub const VAL_MANIFEST: &str = "val.csv";
pub const TEST_MANIFEST: &str = "test.csv";
pub const VOCAB: &str = "vocab.json";
pub const DISTRIBUTION_TXT: &str = "distribution.txt";
pub const DISTRIBUTION_JSON: &str = "distribution.json";

/// Row order and scale of the distribution table.
const TABLE_ROWS: [(&str, Task); 5] = [
    ("Sentiment", Task::Sentiment),
    ("Humor", Task::HumorScale),
    ("Sarcasm", Task::SarcasmScale),
    ("Offence", Task::OffenceScale),
    ("Motivation", Task::Motivation),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionRow {
    pub label: String,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub dir: PathBuf,
    pub train: usize,
    pub validation: usize,
    pub test: Option<usize>,
    pub vocab_size: usize,
    pub distribution: Vec<DistributionRow>,
}

/// Counts per class for each label column, the layout of the dataset
/// description table.
pub fn distribution_rows(train: &[MemeSample], validation: &[MemeSample]) -> Vec<DistributionRow> {
    TABLE_ROWS
        .iter()
        .map(|&(label, task)| DistributionRow {
            label: label.to_string(),
            train: class_distribution(train, task).as_vec(),
            validation: class_distribution(validation, task).as_vec(),
        })
        .collect()
}

/// Fixed-width rendering with `-` for classes a column does not have.
pub fn distribution_text(rows: &[DistributionRow]) -> String {
    let cell = |counts: &[usize], c: usize| counts.get(c).map_or("-".to_string(), |n| n.to_string());
    let mut out = String::new();
    let _ = writeln!(out, "{:<12}|{:^31}|{:^31}", "Label", "Train Set", "Validation Set");
    let _ = write!(out, "{:<12}|", "");
    for _ in 0..2 {
        for c in 0..4 {
            let _ = write!(out, "{c:>7} ");
        }
        out.push('|');
    }
    out.pop();
    out.push('\n');
    for row in rows {
        let _ = write!(out, "{:<12}|", row.label);
        for counts in [&row.train, &row.validation] {
            for c in 0..4 {
                let _ = write!(out, "{:>7} ", cell(counts, c));
            }
            out.push('|');
        }
        out.pop();
        out.push('\n');
    }
    out
}

fn check_images(samples: &[MemeSample]) -> CliResult<()> {
    for s in samples {
        if let ImageRef::Path(p) = &s.image {
            if !p.is_file() {
                return Err(Error::Image {
                    id: s.id.clone(),
                    path: p.clone(),
                    message: "file not found".into(),
                }
                .into());
            }
        }
    }
    Ok(())
}

/// Writes in-memory images as PNG under `images/` and points the samples at
/// them with paths relative to `dir`.
fn materialise_images(samples: &mut [MemeSample], dir: &Path) -> CliResult<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| io(&images, e))?;
    for s in samples {
        if let ImageRef::Pixels(grid) = &s.image {
            let rel = PathBuf::from("images").join(format!("{}.png", s.id));
            save_png(grid, &dir.join(&rel))?;
            s.image = ImageRef::Path(rel);
        }
    }
    Ok(())
}

fn load_samples(cfg: &ExperimentConfig) -> CliResult<Vec<MemeSample>> {
    if let Some(path) = &cfg.data.manifest {
        let samples = load_manifest(path)?;
        check_images(&samples)?;
        return Ok(samples);
    }
    let syn = cfg.data.synthetic.as_ref().expect("validated config has a data source");
    Ok(generate_synthetic(syn.n, &syn.signal, syn.seed)?)
}

/// Writes split manifests, the vocabulary and the distribution table under
/// the prepared directory, replacing any earlier preparation.
pub fn run_prepare(cfg: &ExperimentConfig) -> CliResult<PrepareSummary> {
    let dir = cfg.prepared_dir();
    let staging = Staging::new(&cfg.output_dir, "prepared")?;
    let out = staging.path();

    let mut samples = load_samples(cfg)?;
    let split = split_train_val(&samples, cfg.split.val_fraction, cfg.split.seed, cfg.split.stratify)?;
    let test = match &cfg.data.test_manifest {
        Some(path) => {
            let t = load_manifest(path)?;
            check_images(&t)?;
            Some(t)
        }
        None => None,
    };
    let (mut train, mut validation) = (split.train, split.validation);
    for part in [&mut train, &mut validation] {
        materialise_images(part, out)?;
    }
    samples.clear();

    write_manifest(&train, out.join(TRAIN_MANIFEST))?;
    write_manifest(&validation, out.join(VAL_MANIFEST))?;
    if let Some(t) = &test {
        write_manifest(t, out.join(TEST_MANIFEST))?;
    }

    let corpus: Vec<Vec<String>> = train.iter().map(|s| preprocess_text(&s.text)).collect();
    let vocab = build_vocab(&corpus, cfg.text.min_count, cfg.text.max_size)?;
    vocab.save(out.join(VOCAB))?;

    let distribution = distribution_rows(&train, &validation);
    let txt = out.join(DISTRIBUTION_TXT);
    fs::write(&txt, distribution_text(&distribution)).map_err(|e| io(&txt, e))?;
    let json = out.join(DISTRIBUTION_JSON);
    let body = serde_json::to_string_pretty(&distribution).map_err(Error::from)?;
    fs::write(&json, body + "\n").map_err(|e| io(&json, e))?;

    staging.commit_dir(&dir)?;
    log::info!(
        "prepared {} train / {} validation samples, vocabulary of {}",
        train.len(),
        validation.len(),
        vocab.len()
    );
    Ok(PrepareSummary {
        dir,
        train: train.len(),
        validation: validation.len(),
        test: test.map(|t| t.len()),
        vocab_size: vocab.len(),
        distribution,
    })
}
