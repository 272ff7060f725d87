//! Combining text and image features: early fusion by concatenation, the
//! bimodal gated multimodal unit, and late fusion of predicted probabilities.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::encoders::{Features, Modality};
use crate::error::{Error, Result};
use crate::layers::{dropout, Activation, BatchNorm, Dense, Mode};
use crate::params::{glorot_uniform, zeros, ParamId, ParamStore, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    /// Single modality, no fusion.
    None,
    Early,
    Gmu,
    Late,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyFusionConfig {
    /// Per-modality projection width; `None` concatenates raw features.
    pub projection: Option<usize>,
    /// One dense layer applied to both projected modalities.
    pub shared_dense: bool,
    /// Dense layer over the concatenated vector, same width.
    pub post_dense: bool,
    /// Batch-normalise each modality before anything else.
    pub batch_norm: bool,
    pub dropout: f64,
}

impl Default for EarlyFusionConfig {
    fn default() -> Self {
        EarlyFusionConfig {
            projection: Some(64),
            shared_dense: true,
            post_dense: true,
            batch_norm: false,
            dropout: 0.0,
        }
    }
}

impl EarlyFusionConfig {
    /// Normalise and concatenate only.
    pub fn normalise_and_concat() -> Self {
        EarlyFusionConfig {
            projection: None,
            shared_dense: false,
            post_dense: false,
            batch_norm: true,
            dropout: 0.0,
        }
    }

    pub fn output_dim(&self, text_dim: usize, image_dim: usize) -> usize {
        match self.projection {
            Some(p) => 2 * p,
            None => text_dim + image_dim,
        }
    }
}

/// Parameters of early fusion. The joint vector is always `[text; image]`.
#[derive(Debug, Clone)]
pub struct EarlyFusion {
    pub config: EarlyFusionConfig,
    pub text_dim: usize,
    pub image_dim: usize,
    norms: Option<(BatchNorm, BatchNorm)>,
    text_proj: Option<Dense>,
    image_proj: Option<Dense>,
    shared: Option<Dense>,
    post: Option<Dense>,
}

impl EarlyFusion {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        text_dim: usize,
        image_dim: usize,
        config: &EarlyFusionConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        if config.shared_dense && config.projection.is_none() && text_dim != image_dim {
            return Err(Error::invalid(
                "a shared dense layer needs equal modality widths; set a projection",
            ));
        }
        let norms = config.batch_norm.then(|| {
            (
                BatchNorm::new(store, &format!("{name}.text_norm"), text_dim),
                BatchNorm::new(store, &format!("{name}.image_norm"), image_dim),
            )
        });
        let (text_proj, image_proj, width) = match config.projection {
            Some(p) => (
                Some(Dense::new(store, &format!("{name}.text_proj"), text_dim, p, Activation::Relu, rng)),
                Some(Dense::new(store, &format!("{name}.image_proj"), image_dim, p, Activation::Relu, rng)),
                p,
            ),
            None => (None, None, text_dim),
        };
        let shared = config
            .shared_dense
            .then(|| Dense::new(store, &format!("{name}.shared"), width, width, Activation::Relu, rng));
        let joint = config.output_dim(text_dim, image_dim);
        let post = config
            .post_dense
            .then(|| Dense::new(store, &format!("{name}.post"), joint, joint, Activation::Relu, rng));
        Ok(EarlyFusion {
            config: config.clone(),
            text_dim,
            image_dim,
            norms,
            text_proj,
            image_proj,
            shared,
            post,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim(self.text_dim, self.image_dim)
    }

    pub fn fuse(&self, g: &mut Graph<'_>, text: Features, image: Features, mode: &mut Mode<'_>) -> Result<Var> {
        check_inputs(&text, &image, self.text_dim, self.image_dim)?;
        let (mut t, mut v) = (text.values, image.values);
        if let Some((tn, vn)) = &self.norms {
            t = tn.forward(g, t, mode)?;
            v = vn.forward(g, v, mode)?;
        }
        if let (Some(tp), Some(vp)) = (&self.text_proj, &self.image_proj) {
            t = tp.forward(g, t)?;
            v = vp.forward(g, v)?;
        }
        if let Some(shared) = &self.shared {
            t = shared.forward(g, t)?;
            v = shared.forward(g, v)?;
        }
        let mut joint = g.concat_cols(&[t, v])?;
        if let Some(post) = &self.post {
            joint = post.forward(g, joint)?;
        }
        dropout(g, joint, self.config.dropout, mode)
    }
}

fn check_inputs(text: &Features, image: &Features, text_dim: usize, image_dim: usize) -> Result<()> {
    if text.modality != Modality::Text || image.modality != Modality::Image {
        return Err(Error::invalid("fusion expects text features first, image second"));
    }
    if text.dim != text_dim || image.dim != image_dim {
        return Err(Error::shape(format!(
            "fusion built for ({text_dim}, {image_dim}) features, got ({}, {})",
            text.dim, image.dim
        )));
    }
    Ok(())
}

/// Weights of the bimodal gated multimodal unit. Matrices map row vectors:
/// `x·W` with `W: in × hidden`.
#[derive(Debug, Clone)]
pub struct GmuParams {
    pub w_text: ParamId,
    pub w_image: ParamId,
    pub w_gate: ParamId,
    pub b_text: ParamId,
    pub b_image: ParamId,
    pub b_gate: ParamId,
    pub text_dim: usize,
    pub image_dim: usize,
    pub hidden_dim: usize,
}

impl GmuParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        text_dim: usize,
        image_dim: usize,
        hidden_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if text_dim == 0 || image_dim == 0 || hidden_dim == 0 {
            return Err(Error::invalid("GMU dimensions must be positive"));
        }
        let joint = text_dim + image_dim;
        Ok(GmuParams {
            w_text: store.add(
                format!("{name}.w_text"),
                glorot_uniform(rng, &[text_dim, hidden_dim], text_dim, hidden_dim),
            ),
            w_image: store.add(
                format!("{name}.w_image"),
                glorot_uniform(rng, &[image_dim, hidden_dim], image_dim, hidden_dim),
            ),
            w_gate: store.add(
                format!("{name}.w_gate"),
                glorot_uniform(rng, &[joint, hidden_dim], joint, hidden_dim),
            ),
            b_text: store.add(format!("{name}.b_text"), zeros(&[hidden_dim])),
            b_image: store.add(format!("{name}.b_image"), zeros(&[hidden_dim])),
            b_gate: store.add(format!("{name}.b_gate"), zeros(&[hidden_dim])),
            text_dim,
            image_dim,
            hidden_dim,
        })
    }

    /// `z ⊙ tanh(x_t·W_t + b_t) + (1 − z) ⊙ tanh(x_v·W_v + b_v)` with the
    /// gate `z = σ([x_t; x_v]·W_z + b_z)` computed from the raw inputs.
    pub fn fuse(&self, g: &mut Graph<'_>, text: Features, image: Features) -> Result<Var> {
        check_inputs(&text, &image, self.text_dim, self.image_dim)?;
        gmu_fuse(g, text.values, image.values, self)
    }
}

/// The unit on raw tape values; see [`GmuParams::fuse`].
pub fn gmu_fuse(g: &mut Graph<'_>, text: Var, image: Var, p: &GmuParams) -> Result<Var> {
    let (wt, bt) = (g.param(p.w_text), g.param(p.b_text));
    let (wv, bv) = (g.param(p.w_image), g.param(p.b_image));
    let (wz, bz) = (g.param(p.w_gate), g.param(p.b_gate));
    let ht = g.affine(text, wt, bt)?;
    let ht = g.tanh(ht);
    let hv = g.affine(image, wv, bv)?;
    let hv = g.tanh(hv);
    let both = g.concat_cols(&[text, image])?;
    let z = g.affine(both, wz, bz)?;
    let z = g.sigmoid(z);
    let gated_text = g.mul(z, ht)?;
    let rest = g.one_minus(z);
    let gated_image = g.mul(rest, hv)?;
    g.add(gated_text, gated_image)
}

/// Weighted average of probability vectors, renormalised to sum to one.
pub fn late_fuse(probs: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    if probs.is_empty() || probs.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} probability vectors with {} weights",
            probs.len(),
            weights.len()
        )));
    }
    let k = probs[0].len();
    if k == 0 || probs.iter().any(|p| p.len() != k) {
        return Err(Error::shape("probability vectors differ in length"));
    }
    for p in probs {
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-6 || p.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid(format!("not a probability vector: {p:?}")));
        }
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid(format!("negative or non-finite weight in {weights:?}")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("late fusion weights are all zero"));
    }
    let mut out = vec![0.0; k];
    for (p, &w) in probs.iter().zip(weights) {
        for (o, &v) in out.iter_mut().zip(p.iter()) {
            *o += w * v;
        }
    }
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    Ok(out)
}
