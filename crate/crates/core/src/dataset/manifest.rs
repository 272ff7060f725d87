use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ImageRef, LabelValues, MemeSample};
use crate::error::{Error, Result};
use crate::tasks::LabelColumn;

pub const MANIFEST_COLUMNS: [&str; 8] = [
    "id",
    "text",
    "image_path",
    "sentiment",
    "humor",
    "sarcasm",
    "offence",
    "motivation",
];

#[derive(Debug, Deserialize, Serialize)]
struct ManifestRow {
    id: String,
    text: String,
    image_path: String,
    sentiment: i64,
    humor: i64,
    sarcasm: i64,
    offence: i64,
    motivation: i64,
}

impl ManifestRow {
    fn into_sample(self, base: &Path, context: &str, row: usize) -> Result<MemeSample> {
        let raw = [
            (LabelColumn::Sentiment, self.sentiment),
            (LabelColumn::Humor, self.humor),
            (LabelColumn::Sarcasm, self.sarcasm),
            (LabelColumn::Offence, self.offence),
            (LabelColumn::Motivation, self.motivation),
        ];
        let mut labels = LabelValues::default();
        for (col, value) in raw {
            if value < 0 || value as usize >= col.cardinality() {
                return Err(Error::LabelOutOfRange {
                    context: context.to_string(),
                    row,
                    column: col.name(),
                    value,
                    range: match col.cardinality() {
                        2 => "0..=1",
                        3 => "0..=2",
                        _ => "0..=3",
                    },
                });
            }
            col.set(&mut labels, value as u8);
        }
        if self.id.is_empty() {
            return Err(Error::MalformedRow {
                context: context.to_string(),
                row,
                message: "empty id".into(),
            });
        }
        let path = PathBuf::from(&self.image_path);
        let path = if path.is_relative() {
            base.join(path)
        } else {
            path
        };
        Ok(MemeSample {
            id: self.id,
            text: self.text,
            image: ImageRef::Path(path),
            labels,
        })
    }
}

/// Loads a manifest, choosing the JSON-lines reader for `.jsonl`/`.json`
/// files and the delimited reader otherwise. Relative image paths are
/// resolved against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<MemeSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let context = path.display().to_string();
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => read_manifest_jsonl(BufReader::new(file), &base, &context),
        _ => read_manifest_csv(file, &base, &context),
    }
}

/// Parses the delimited manifest. Row numbers in errors count data rows
/// from 1 (the header is row 0).
pub fn read_manifest_csv(reader: impl Read, base: &Path, context: &str) -> Result<Vec<MemeSample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::MalformedRow {
        context: context.to_string(),
        row: 0,
        message: e.to_string(),
    })?;
    let missing: Vec<&str> = MANIFEST_COLUMNS
        .iter()
        .copied()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MalformedRow {
            context: context.to_string(),
            row: 0,
            message: format!("header lacks columns {missing:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in rdr.deserialize::<ManifestRow>().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::MalformedRow {
            context: context.to_string(),
            row,
            message: e.to_string(),
        })?;
        rows.push((row, record));
    }
    collect_rows(rows, base, context)
}

pub fn read_manifest_jsonl(reader: impl BufRead, base: &Path, context: &str) -> Result<Vec<MemeSample>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| Error::io(context, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRow = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            context: context.to_string(),
            row,
            message: e.to_string(),
        })?;
        rows.push((row, record));
    }
    collect_rows(rows, base, context)
}

fn collect_rows(rows: Vec<(usize, ManifestRow)>, base: &Path, context: &str) -> Result<Vec<MemeSample>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (row, record) in rows {
        let sample = record.into_sample(base, context, row)?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::DuplicateId {
                context: context.to_string(),
                row,
                id: sample.id,
            });
        }
        out.push(sample);
    }
    Ok(out)
}

/// Writes the delimited manifest. Every sample must reference an image file.
pub fn write_manifest(dataset: &[MemeSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = format!("{}\n", MANIFEST_COLUMNS.join(",")).into_bytes();
    {
        let mut wtr = csv::WriterBuilder::new()
            .has_headers(false)
            .quote_style(csv::QuoteStyle::NonNumeric)
            .from_writer(&mut buf);
        for sample in dataset {
            let ImageRef::Path(image_path) = &sample.image else {
                return Err(Error::Data(format!(
                    "sample `{}` holds an in-memory image; save it before writing a manifest",
                    sample.id
                )));
            };
            let l = sample.labels;
            wtr.serialize(ManifestRow {
                id: sample.id.clone(),
                text: sample.text.clone(),
                image_path: image_path.display().to_string(),
                sentiment: l.sentiment.into(),
                humor: l.humor.into(),
                sarcasm: l.sarcasm.into(),
                offence: l.offence.into(),
                motivation: l.motivation.into(),
            })
            .map_err(|e| Error::Data(e.to_string()))?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}
