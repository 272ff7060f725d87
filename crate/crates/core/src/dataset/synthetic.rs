//! Synthetic memes whose labels are planted in the text, the image, both,
//! or neither, for desk-scale end-to-end checks.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ImageRef, LabelValues, MemeSample, PixelGrid};
use crate::error::{Error, Result};
use crate::params::{rng_stream, Rng};
use crate::tasks::LabelColumn;

/// Patch colours, one per class code.
pub const PALETTE: [[u8; 3]; 4] = [[220, 30, 30], [30, 200, 40], [30, 60, 220], [230, 210, 30]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    /// A class-specific token is injected into the text.
    Text,
    /// A class-coloured patch is painted into the image.
    Image,
    /// Both of the above, carrying the same class.
    Redundant,
    /// Text carries a uniform code `t`, the image a code `v`, and the label
    /// is `(t + v) mod K`; neither modality alone is informative.
    Joint,
    /// Nothing about the label is planted.
    Noise,
}

impl SignalKind {
    fn in_text(self) -> bool {
        matches!(self, SignalKind::Text | SignalKind::Redundant | SignalKind::Joint)
    }

    fn in_image(self) -> bool {
        matches!(self, SignalKind::Image | SignalKind::Redundant | SignalKind::Joint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSignal {
    pub kind: SignalKind,
    /// Unnormalised class prior; uniform when absent.
    #[serde(default)]
    pub prior: Option<Vec<f64>>,
}

impl ColumnSignal {
    pub fn new(kind: SignalKind) -> Self {
        ColumnSignal { kind, prior: None }
    }

    pub fn with_prior(kind: SignalKind, prior: Vec<f64>) -> Self {
        ColumnSignal {
            kind,
            prior: Some(prior),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    /// Columns not listed are noise with a uniform prior.
    #[serde(default)]
    pub columns: BTreeMap<LabelColumn, ColumnSignal>,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_filler_words")]
    pub filler_words: usize,
    #[serde(default = "default_filler_vocab")]
    pub filler_vocab: usize,
}

fn default_image_size() -> usize {
    16
}
fn default_filler_words() -> usize {
    6
}
fn default_filler_vocab() -> usize {
    40
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec {
            columns: BTreeMap::new(),
            image_size: default_image_size(),
            filler_words: default_filler_words(),
            filler_vocab: default_filler_vocab(),
        }
    }
}

impl SignalSpec {
    pub fn single(column: LabelColumn, signal: ColumnSignal) -> Self {
        SignalSpec {
            columns: [(column, signal)].into_iter().collect(),
            ..Default::default()
        }
    }

    /// The token planted in the text for `column` and class code `code`.
    pub fn cue_token(column: LabelColumn, code: usize) -> String {
        format!("{}cue{code}", column.name())
    }
}

struct Plan {
    column: LabelColumn,
    kind: SignalKind,
    prior: WeightedIndex<f64>,
}

fn normalised_prior(column: LabelColumn, prior: Option<&Vec<f64>>) -> Result<WeightedIndex<f64>> {
    let k = column.cardinality();
    let weights = prior.cloned().unwrap_or_else(|| vec![1.0; k]);
    if weights.len() != k {
        return Err(Error::invalid(format!(
            "prior for `{}` has {} entries; expected {k}",
            column.name(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid(format!(
            "prior for `{}` cannot be normalised: {weights:?}",
            column.name()
        )));
    }
    WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))
}

/// Generates `n` samples carrying the signals declared in `spec`.
pub fn generate_synthetic(n: usize, spec: &SignalSpec, seed: u64) -> Result<Vec<MemeSample>> {
    if n == 0 {
        return Err(Error::invalid("synthetic dataset needs at least one sample"));
    }
    let plans = LabelColumn::ALL
        .iter()
        .map(|&column| {
            let signal = spec.columns.get(&column);
            Ok(Plan {
                column,
                kind: signal.map_or(SignalKind::Noise, |s| s.kind),
                prior: normalised_prior(column, signal.and_then(|s| s.prior.as_ref()))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bands = plans.iter().filter(|p| p.kind.in_image()).count();
    let size = spec.image_size;
    if size < 4 || (bands > 0 && size / bands < 2) {
        return Err(Error::invalid(format!(
            "image size {size} too small for {bands} signal bands"
        )));
    }
    let mut rng = rng_stream(seed, 7);
    (0..n)
        .map(|i| Ok(synth_one(i, &plans, spec, bands, &mut rng)))
        .collect()
}

fn synth_one(i: usize, plans: &[Plan], spec: &SignalSpec, bands: usize, rng: &mut Rng) -> MemeSample {
    let size = spec.image_size;
    let mut labels = LabelValues::default();
    let mut words: Vec<String> = (0..spec.filler_words)
        .map(|_| format!("w{}", rng.gen_range(0..spec.filler_vocab.max(1))))
        .collect();
    let mut pixels: Vec<u8> = (0..size * size * 3).map(|_| rng.gen_range(96..=160)).collect();

    let mut band = 0;
    for plan in plans {
        let k = plan.column.cardinality();
        let y = plan.prior.sample(rng);
        plan.column.set(&mut labels, y as u8);
        let (text_code, image_code) = match plan.kind {
            SignalKind::Joint => {
                let t = rng.gen_range(0..k);
                (t, (y + k - t) % k)
            }
            _ => (y, y),
        };
        if plan.kind.in_text() {
            let at = rng.gen_range(0..=words.len());
            words.insert(at, SignalSpec::cue_token(plan.column, text_code));
        }
        if plan.kind.in_image() {
            paint_patch(&mut pixels, size, band, bands, PALETTE[image_code], rng);
            band += 1;
        }
    }

    let mut text = words.join(" ");
    if rng.gen_bool(0.3) {
        text = text.to_uppercase();
    }
    if rng.gen_bool(0.3) {
        text.push_str("!!");
    }
    MemeSample {
        id: format!("syn{i:05}"),
        text,
        image: ImageRef::Pixels(Arc::new(PixelGrid {
            width: size,
            height: size,
            channels: 3,
            data: pixels,
        })),
        labels,
    }
}

/// Paints a half-width patch spanning horizontal band `band` of `bands`,
/// at a random horizontal offset.
fn paint_patch(pixels: &mut [u8], size: usize, band: usize, bands: usize, rgb: [u8; 3], rng: &mut Rng) {
    let band_h = size / bands;
    let (y0, y1) = (band * band_h, (band + 1) * band_h);
    let w = size / 2;
    let x0 = rng.gen_range(0..=size - w);
    for y in y0..y1 {
        for x in x0..x0 + w {
            let at = (y * size + x) * 3;
            for c in 0..3 {
                let jitter: i16 = rng.gen_range(-10..=10);
                pixels[at + c] = (rgb[c] as i16 + jitter).clamp(0, 255) as u8;
            }
        }
    }
}
