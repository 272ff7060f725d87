use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{Features, Modality};
use crate::autograd::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::layers::{Activation, BatchNorm, Dense, Mode};
use crate::params::{ParamStore, Rng};

/// Input handed to an external backbone.
pub enum BackboneInput<'a> {
    /// Preprocessed tokens per sample.
    Text(&'a [Vec<String>]),
    /// `batch × 3 × size × size`, values in `[0, 1]`.
    Image(&'a Tensor),
}

/// A frozen, externally supplied feature extractor.
pub trait Backbone: Send + Sync {
    fn name(&self) -> &str;
    fn modality(&self) -> Modality;
    fn output_dim(&self) -> usize;
    /// One row of `output_dim` features per sample.
    fn encode(&self, input: BackboneInput<'_>) -> Result<Array2<f64>>;
}

impl fmt::Debug for dyn Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Backbone({}, {:?}, {})", self.name(), self.modality(), self.output_dim())
    }
}

/// Backbones available by name.
#[derive(Clone, Default)]
pub struct BackboneRegistry {
    entries: BTreeMap<String, Arc<dyn Backbone>>,
}

impl fmt::Debug for BackboneRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

impl BackboneRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with the deterministic stand-ins below.
    pub fn with_stubs() -> Self {
        let mut r = Self::new();
        r.register(Arc::new(HashedBagOfWords::new("hashed-bow", 64)));
        r.register(Arc::new(PooledColor::new("pooled-color", 4)));
        r.register(Arc::new(ConstantBackbone::new("constant-text", Modality::Text, 16, 0.5)));
        r.register(Arc::new(ConstantBackbone::new("constant-image", Modality::Image, 16, 0.5)));
        r
    }

    pub fn register(&mut self, backbone: Arc<dyn Backbone>) {
        self.entries.insert(backbone.name().to_string(), backbone);
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Backbone>> {
        self.entries.get(name).cloned().ok_or_else(|| Error::UnknownBackbone {
            name: name.to_string(),
            registered: self.names(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    /// Backbone weights stay fixed; only the projection head trains.
    Frozen,
    /// Backbone weights train too. Requires a backbone that exposes
    /// gradients, which the [`Backbone`] contract does not.
    FineTune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainedConfig {
    pub backbone: String,
    #[serde(default = "frozen")]
    pub freeze: FreezePolicy,
    /// Dense sizes after the backbone; the last one is the output dimension.
    pub hidden: Vec<usize>,
    /// Batch-normalise backbone output before the dense layers.
    #[serde(default)]
    pub batch_norm: bool,
    /// Token budget (text) or square input size (image).
    pub input_size: usize,
}

fn frozen() -> FreezePolicy {
    FreezePolicy::Frozen
}

impl PretrainedConfig {
    /// Text path: batch normalisation and one 256-unit layer over a
    /// 199-token input.
    pub fn text(backbone: impl Into<String>) -> Self {
        PretrainedConfig {
            backbone: backbone.into(),
            freeze: FreezePolicy::Frozen,
            hidden: vec![256],
            batch_norm: true,
            input_size: 199,
        }
    }

    /// Vision path: dense layers of 768 and 256 over 256×256 input.
    pub fn image(backbone: impl Into<String>) -> Self {
        PretrainedConfig {
            backbone: backbone.into(),
            freeze: FreezePolicy::Frozen,
            hidden: vec![768, 256],
            batch_norm: false,
            input_size: 256,
        }
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.hidden.last().copied()
    }
}

/// Backbone followed by trainable projection layers.
#[derive(Clone)]
pub struct PretrainedEncoder {
    pub config: PretrainedConfig,
    backbone: Arc<dyn Backbone>,
    norm: Option<BatchNorm>,
    dense: Vec<Dense>,
}

impl fmt::Debug for PretrainedEncoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PretrainedEncoder")
            .field("config", &self.config)
            .field("backbone", &self.backbone)
            .finish()
    }
}

/// Looks up `config.backbone` and attaches the projection head.
pub fn pretrained_adapter(
    registry: &BackboneRegistry,
    config: &PretrainedConfig,
    modality: Modality,
    store: &mut ParamStore,
    name: &str,
    rng: &mut Rng,
) -> Result<PretrainedEncoder> {
    let backbone = registry.get(&config.backbone)?;
    if backbone.modality() != modality {
        return Err(Error::invalid(format!(
            "backbone `{}` encodes {:?}, not {modality:?}",
            config.backbone,
            backbone.modality()
        )));
    }
    if config.freeze == FreezePolicy::FineTune {
        return Err(Error::invalid(format!(
            "backbone `{}` exposes no gradients; only the frozen policy is supported",
            config.backbone
        )));
    }
    if config.hidden.is_empty() || config.hidden.contains(&0) || config.input_size == 0 {
        return Err(Error::invalid(format!("adapter dimensions must be positive: {config:?}")));
    }
    let mut width = backbone.output_dim();
    let norm = config
        .batch_norm
        .then(|| BatchNorm::new(store, &format!("{name}.norm"), width));
    let mut dense = Vec::with_capacity(config.hidden.len());
    for (i, &d) in config.hidden.iter().enumerate() {
        dense.push(Dense::new(store, &format!("{name}.dense{i}"), width, d, Activation::Relu, rng));
        width = d;
    }
    Ok(PretrainedEncoder {
        config: config.clone(),
        backbone,
        norm,
        dense,
    })
}

impl PretrainedEncoder {
    pub fn output_dim(&self) -> usize {
        self.dense.last().map_or(self.backbone.output_dim(), |d| d.output_dim)
    }

    pub fn modality(&self) -> Modality {
        self.backbone.modality()
    }

    pub fn encode(&self, g: &mut Graph<'_>, input: BackboneInput<'_>, mode: &mut Mode<'_>) -> Result<Features> {
        let raw = self.backbone.encode(input)?;
        if raw.ncols() != self.backbone.output_dim() {
            return Err(Error::shape(format!(
                "backbone `{}` declared {} features but produced {}",
                self.backbone.name(),
                self.backbone.output_dim(),
                raw.ncols()
            )));
        }
        let mut x = g.input(raw.into_dyn());
        if let Some(norm) = &self.norm {
            x = norm.forward(g, x, mode)?;
        }
        for layer in &self.dense {
            x = layer.forward(g, x)?;
        }
        Ok(Features {
            values: x,
            modality: self.modality(),
            dim: self.output_dim(),
        })
    }
}

/// Emits the same vector for every sample.
#[derive(Debug, Clone)]
pub struct ConstantBackbone {
    name: String,
    modality: Modality,
    dim: usize,
    value: f64,
}

impl ConstantBackbone {
    pub fn new(name: &str, modality: Modality, dim: usize, value: f64) -> Self {
        ConstantBackbone {
            name: name.to_string(),
            modality,
            dim,
            value,
        }
    }
}

impl Backbone for ConstantBackbone {
    fn name(&self) -> &str {
        &self.name
    }
    fn modality(&self) -> Modality {
        self.modality
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn encode(&self, input: BackboneInput<'_>) -> Result<Array2<f64>> {
        let n = match (input, self.modality) {
            (BackboneInput::Text(t), Modality::Text) => t.len(),
            (BackboneInput::Image(i), Modality::Image) => i.shape()[0],
            _ => return Err(Error::invalid(format!("`{}` got the wrong modality", self.name))),
        };
        Ok(Array2::from_elem((n, self.dim), self.value))
    }
}

/// Signed feature hashing of tokens (FNV-1a), L2-normalised.
#[derive(Debug, Clone)]
pub struct HashedBagOfWords {
    name: String,
    dim: usize,
}

impl HashedBagOfWords {
    pub fn new(name: &str, dim: usize) -> Self {
        HashedBagOfWords {
            name: name.to_string(),
            dim,
        }
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Backbone for HashedBagOfWords {
    fn name(&self) -> &str {
        &self.name
    }
    fn modality(&self) -> Modality {
        Modality::Text
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn encode(&self, input: BackboneInput<'_>) -> Result<Array2<f64>> {
        let BackboneInput::Text(docs) = input else {
            return Err(Error::invalid(format!("`{}` encodes text only", self.name)));
        };
        let mut out = Array2::<f64>::zeros((docs.len(), self.dim));
        for (mut row, doc) in out.axis_iter_mut(Axis(0)).zip(docs) {
            for t in doc {
                let h = fnv1a(t);
                let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
                row[(h % self.dim as u64) as usize] += sign;
            }
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
        Ok(out)
    }
}

/// Mean colour over a `grid × grid` partition of the image.
#[derive(Debug, Clone)]
pub struct PooledColor {
    name: String,
    grid: usize,
}

impl PooledColor {
    pub fn new(name: &str, grid: usize) -> Self {
        PooledColor {
            name: name.to_string(),
            grid,
        }
    }
}

impl Backbone for PooledColor {
    fn name(&self) -> &str {
        &self.name
    }
    fn modality(&self) -> Modality {
        Modality::Image
    }
    fn output_dim(&self) -> usize {
        3 * self.grid * self.grid
    }
    fn encode(&self, input: BackboneInput<'_>) -> Result<Array2<f64>> {
        let BackboneInput::Image(images) = input else {
            return Err(Error::invalid(format!("`{}` encodes images only", self.name)));
        };
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 || s[2] < self.grid || s[3] < self.grid {
            return Err(Error::shape(format!("`{}` cannot pool images of shape {s:?}", self.name)));
        }
        let g = self.grid;
        let mut out = Array2::zeros((s[0], self.output_dim()));
        for n in 0..s[0] {
            for c in 0..3 {
                for y in 0..s[2] {
                    for x in 0..s[3] {
                        let cell = (y * g / s[2]) * g + x * g / s[3];
                        out[[n, c * g * g + cell]] += images[[n, c, y, x]];
                    }
                }
            }
        }
        // every cell covers the same number of pixels only when g divides
        // the side; normalise per cell count instead
        let mut counts = vec![0.0; g * g];
        for y in 0..s[2] {
            for x in 0..s[3] {
                counts[(y * g / s[2]) * g + x * g / s[3]] += 1.0;
            }
        }
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (i, v) in row.iter_mut().enumerate() {
                *v /= counts[i % (g * g)];
            }
        }
        Ok(out)
    }
}
