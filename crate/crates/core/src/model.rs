//! Single-task and multitask classifiers assembled from encoders, a fusion
//! block and one softmax head per task.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::encoders::{
    pretrained_adapter, BackboneInput, BackboneRegistry, BiLstmConfig, BiLstmEncoder, CnnConfig, CnnEncoder,
    Features, Modality, PretrainedConfig, PretrainedEncoder, TokenBatch,
};
use crate::error::{Error, Result};
use crate::fusion::{EarlyFusion, EarlyFusionConfig, FusionStrategy, GmuParams};
use crate::layers::{Activation, Dense, Mode};
use crate::params::{rng_stream, ParamId, ParamStore};
use crate::tasks::{Task, TaskGroup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextEncoderSpec {
    None,
    BiLstm(BiLstmConfig),
    Pretrained(PretrainedConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageEncoderSpec {
    None,
    Cnn(CnnConfig),
    Pretrained(PretrainedConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub modality_vec: usize,
    pub joint_vec: usize,
    /// Dense layer in front of each softmax; multitask models use 128.
    pub per_task_hidden: Option<usize>,
    pub gmu_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            modality_vec: 64,
            joint_vec: 128,
            per_task_hidden: None,
            gmu_hidden: 256,
        }
    }
}

impl ModelDims {
    pub fn multitask() -> Self {
        ModelDims {
            modality_vec: 128,
            joint_vec: 256,
            per_task_hidden: Some(128),
            gmu_hidden: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub text: TextEncoderSpec,
    pub image: ImageEncoderSpec,
    pub fusion: FusionStrategy,
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub mtl: bool,
    #[serde(default)]
    pub dims: ModelDims,
    /// Early-fusion wiring; its projection width must equal `dims.modality_vec`.
    #[serde(default)]
    pub early: EarlyFusionConfig,
    /// Loss weight per task; all ones when absent.
    #[serde(default)]
    pub task_weights: Option<Vec<f64>>,
}

impl ModelSpec {
    /// BiLSTM text, AlexNet-style image, early fusion, one task.
    pub fn bilstm_cnn_early(task: Task, vocab_size: usize) -> Self {
        ModelSpec {
            text: TextEncoderSpec::BiLstm(BiLstmConfig {
                vocab_size,
                ..Default::default()
            }),
            image: ImageEncoderSpec::Cnn(CnnConfig::default()),
            fusion: FusionStrategy::Early,
            tasks: vec![task],
            mtl: false,
            dims: ModelDims::default(),
            early: EarlyFusionConfig::default(),
            task_weights: None,
        }
    }

    /// Sentiment plus every subtask of `group`, with a second BiLSTM layer
    /// and doubled fusion widths.
    pub fn multitask(group: TaskGroup, vocab_size: usize) -> Self {
        let mut tasks = vec![Task::Sentiment];
        tasks.extend(group.subtasks().iter().copied().filter(|&t| t != Task::Sentiment));
        let dims = ModelDims::multitask();
        ModelSpec {
            text: TextEncoderSpec::BiLstm(BiLstmConfig {
                vocab_size,
                layers: 2,
                ..Default::default()
            }),
            image: ImageEncoderSpec::Cnn(CnnConfig::default()),
            fusion: FusionStrategy::Early,
            tasks,
            mtl: true,
            early: EarlyFusionConfig {
                projection: Some(dims.modality_vec),
                ..Default::default()
            },
            dims,
            task_weights: None,
        }
    }

    /// Frozen backbones with their adapters, batch-normalised and
    /// concatenated.
    pub fn pretrained_early(task: Task, text_backbone: &str, image_backbone: &str) -> Self {
        ModelSpec {
            text: TextEncoderSpec::Pretrained(PretrainedConfig::text(text_backbone)),
            image: ImageEncoderSpec::Pretrained(PretrainedConfig::image(image_backbone)),
            fusion: FusionStrategy::Early,
            tasks: vec![task],
            mtl: false,
            dims: ModelDims {
                modality_vec: 256,
                joint_vec: 512,
                ..Default::default()
            },
            early: EarlyFusionConfig::normalise_and_concat(),
            task_weights: None,
        }
    }

    pub fn text_only(mut self) -> Self {
        self.image = ImageEncoderSpec::None;
        self.fusion = FusionStrategy::None;
        self
    }

    pub fn image_only(mut self) -> Self {
        self.text = TextEncoderSpec::None;
        self.fusion = FusionStrategy::None;
        self
    }

    pub fn task_weights(&self) -> Vec<f64> {
        self.task_weights.clone().unwrap_or_else(|| vec![1.0; self.tasks.len()])
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::invalid("a model needs at least one task"));
        }
        if self.mtl && self.tasks.len() < 2 {
            return Err(Error::invalid("a multitask model needs at least two tasks"));
        }
        if !self.mtl && self.tasks.len() != 1 {
            return Err(Error::invalid(format!(
                "{} tasks given to a single-task model; set mtl",
                self.tasks.len()
            )));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if self.tasks[..i].contains(t) {
                return Err(Error::invalid(format!("task `{t}` listed twice")));
            }
        }
        if let Some(w) = &self.task_weights {
            if w.len() != self.tasks.len() || w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::invalid(format!(
                    "task weights {w:?} must be {} non-negative numbers",
                    self.tasks.len()
                )));
            }
        }
        let has_text = self.text != TextEncoderSpec::None;
        let has_image = self.image != ImageEncoderSpec::None;
        match self.fusion {
            FusionStrategy::None if has_text == has_image => Err(Error::invalid(
                "without fusion exactly one of the text and image encoders must be set",
            )),
            FusionStrategy::Early | FusionStrategy::Gmu if !(has_text && has_image) => Err(Error::invalid(format!(
                "{:?} fusion needs both a text and an image encoder",
                self.fusion
            ))),
            FusionStrategy::Late => Err(Error::invalid(
                "late fusion combines separately trained runs; build each unimodal model on its own",
            )),
            FusionStrategy::Early => {
                let d = &self.dims;
                if let Some(p) = self.early.projection {
                    if p != d.modality_vec || d.joint_vec != 2 * d.modality_vec {
                        return Err(Error::invalid(format!(
                            "early fusion projects to {p} but dims are {}/{}; joint must be twice the modality width",
                            d.modality_vec, d.joint_vec
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
enum TextEncoder {
    BiLstm(BiLstmEncoder),
    Pretrained(PretrainedEncoder),
}

#[derive(Debug, Clone)]
enum ImageEncoder {
    Cnn(CnnEncoder),
    Pretrained(PretrainedEncoder),
}

#[derive(Debug, Clone)]
enum Fusion {
    None,
    Early(EarlyFusion),
    Gmu(GmuParams),
}

#[derive(Debug, Clone)]
pub struct TaskHead {
    pub task: Task,
    hidden: Option<Dense>,
    output: Dense,
}

impl TaskHead {
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::with_capacity(4);
        if let Some(h) = &self.hidden {
            ids.extend([h.weight, h.bias]);
        }
        ids.extend([self.output.weight, self.output.bias]);
        ids
    }
}

/// Inputs for one batch; which fields are needed depends on the encoders.
#[derive(Debug, Clone, Default)]
pub struct ModelInputs {
    /// For a BiLSTM text encoder.
    pub tokens: Option<TokenBatch>,
    /// Token lists for a pretrained text backbone.
    pub texts: Option<Vec<Vec<String>>>,
    /// `batch × 3 × size × size`.
    pub images: Option<Tensor>,
}

impl ModelInputs {
    pub fn batch_size(&self) -> Option<usize> {
        self.tokens
            .as_ref()
            .map(|t| t.batch_size())
            .or(self.texts.as_ref().map(|t| t.len()))
            .or(self.images.as_ref().map(|i| i.shape()[0]))
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
    text: Option<TextEncoder>,
    image: Option<ImageEncoder>,
    fusion: Fusion,
    heads: Vec<TaskHead>,
}

/// Builds a model with the stub backbone registry.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    build_model_with(spec, seed, &BackboneRegistry::with_stubs())
}

pub fn build_model_with(spec: &ModelSpec, seed: u64, registry: &BackboneRegistry) -> Result<Model> {
    spec.validate()?;
    let mut rng = rng_stream(seed, 1);
    let mut store = ParamStore::new();
    let rng = &mut rng;

    let text = match &spec.text {
        TextEncoderSpec::None => None,
        TextEncoderSpec::BiLstm(c) => Some(TextEncoder::BiLstm(BiLstmEncoder::new(&mut store, "text", c, rng)?)),
        TextEncoderSpec::Pretrained(c) => Some(TextEncoder::Pretrained(pretrained_adapter(
            registry,
            c,
            Modality::Text,
            &mut store,
            "text",
            rng,
        )?)),
    };
    let image = match &spec.image {
        ImageEncoderSpec::None => None,
        ImageEncoderSpec::Cnn(c) => Some(ImageEncoder::Cnn(CnnEncoder::new(&mut store, "image", c, rng)?)),
        ImageEncoderSpec::Pretrained(c) => Some(ImageEncoder::Pretrained(pretrained_adapter(
            registry,
            c,
            Modality::Image,
            &mut store,
            "image",
            rng,
        )?)),
    };
    let text_dim = text.as_ref().map(|t| match t {
        TextEncoder::BiLstm(e) => e.output_dim(),
        TextEncoder::Pretrained(e) => e.output_dim(),
    });
    let image_dim = image.as_ref().map(|i| match i {
        ImageEncoder::Cnn(e) => e.output_dim(),
        ImageEncoder::Pretrained(e) => e.output_dim(),
    });

    let (fusion, joint) = match spec.fusion {
        FusionStrategy::Early => {
            let (t, v) = (text_dim.unwrap_or(0), image_dim.unwrap_or(0));
            let ef = EarlyFusion::new(&mut store, "fusion", t, v, &spec.early, rng)?;
            let joint = ef.output_dim();
            (Fusion::Early(ef), joint)
        }
        FusionStrategy::Gmu => {
            let (t, v) = (text_dim.unwrap_or(0), image_dim.unwrap_or(0));
            let h = spec.dims.gmu_hidden;
            (Fusion::Gmu(GmuParams::new(&mut store, "gmu", t, v, h, rng)?), h)
        }
        _ => (Fusion::None, text_dim.or(image_dim).unwrap_or(0)),
    };

    let heads = spec
        .tasks
        .iter()
        .map(|&task| {
            let name = format!("head.{}", task.name());
            let (hidden, width) = match spec.dims.per_task_hidden {
                Some(h) => (
                    Some(Dense::new(&mut store, &format!("{name}.hidden"), joint, h, Activation::Relu, rng)),
                    h,
                ),
                None => (None, joint),
            };
            let output = Dense::new(
                &mut store,
                &format!("{name}.output"),
                width,
                task.num_classes(),
                Activation::Identity,
                rng,
            );
            TaskHead { task, hidden, output }
        })
        .collect();

    Ok(Model {
        spec: spec.clone(),
        params: store,
        text,
        image,
        fusion,
        heads,
    })
}

impl Model {
    pub fn tasks(&self) -> &[Task] {
        &self.spec.tasks
    }

    pub fn heads(&self) -> &[TaskHead] {
        &self.heads
    }

    /// Square image size expected by the image encoder.
    pub fn image_size(&self) -> Option<usize> {
        self.image.as_ref().map(|i| match i {
            ImageEncoder::Cnn(e) => e.config.input_size,
            ImageEncoder::Pretrained(e) => e.config.input_size,
        })
    }

    /// Token budget of the text encoder.
    pub fn max_len(&self) -> Option<usize> {
        self.text.as_ref().map(|t| match t {
            TextEncoder::BiLstm(e) => e.config.max_len,
            TextEncoder::Pretrained(e) => e.config.input_size,
        })
    }

    pub fn needs_tokens(&self) -> bool {
        matches!(self.text, Some(TextEncoder::BiLstm(_)))
    }

    pub fn needs_texts(&self) -> bool {
        matches!(self.text, Some(TextEncoder::Pretrained(_)))
    }

    pub fn needs_images(&self) -> bool {
        self.image.is_some()
    }

    /// Parameters outside every task head.
    pub fn trunk_param_ids(&self) -> Vec<ParamId> {
        let heads: Vec<ParamId> = self.heads.iter().flat_map(|h| h.param_ids()).collect();
        self.params.trainable_ids().filter(|id| !heads.contains(id)).collect()
    }

    /// One probability matrix per task, in `spec.tasks` order.
    pub fn forward(&self, g: &mut Graph<'_>, inputs: &ModelInputs, mode: &mut Mode<'_>) -> Result<Vec<Var>> {
        let n = inputs
            .batch_size()
            .ok_or_else(|| Error::shape("empty model inputs"))?;
        let text = self.encode_text(g, inputs, mode)?;
        let image = self.encode_image(g, inputs, mode)?;
        for f in text.iter().chain(image.iter()) {
            if g.shape(f.values)[0] != n {
                return Err(Error::shape("modalities disagree on the batch size"));
            }
        }
        let joint = match (&self.fusion, text, image) {
            (Fusion::Early(ef), Some(t), Some(v)) => ef.fuse(g, t, v, mode)?,
            (Fusion::Gmu(p), Some(t), Some(v)) => p.fuse(g, t, v)?,
            (Fusion::None, Some(f), None) | (Fusion::None, None, Some(f)) => f.values,
            _ => return Err(Error::shape("model inputs do not match its encoders")),
        };
        self.heads
            .iter()
            .map(|h| {
                let mut x = joint;
                if let Some(hidden) = &h.hidden {
                    x = hidden.forward(g, x)?;
                }
                let logits = h.output.forward(g, x)?;
                g.softmax(logits)
            })
            .collect()
    }

    fn encode_text(&self, g: &mut Graph<'_>, inputs: &ModelInputs, mode: &mut Mode<'_>) -> Result<Option<Features>> {
        Ok(match &self.text {
            None => None,
            Some(TextEncoder::BiLstm(e)) => {
                let tokens = inputs
                    .tokens
                    .as_ref()
                    .ok_or_else(|| Error::shape("BiLSTM encoder needs token ids"))?;
                Some(e.encode(g, tokens, mode)?)
            }
            Some(TextEncoder::Pretrained(e)) => {
                let texts = inputs
                    .texts
                    .as_ref()
                    .ok_or_else(|| Error::shape("pretrained text encoder needs token lists"))?;
                Some(e.encode(g, BackboneInput::Text(texts), mode)?)
            }
        })
    }

    fn encode_image(&self, g: &mut Graph<'_>, inputs: &ModelInputs, mode: &mut Mode<'_>) -> Result<Option<Features>> {
        let Some(enc) = &self.image else { return Ok(None) };
        let images = inputs
            .images
            .as_ref()
            .ok_or_else(|| Error::shape("image encoder needs pixel tensors"))?;
        Ok(Some(match enc {
            ImageEncoder::Cnn(e) => e.encode(g, images, mode)?,
            ImageEncoder::Pretrained(e) => e.encode(g, BackboneInput::Image(images), mode)?,
        }))
    }

    /// Inference-mode probabilities, one `batch × classes` matrix per task.
    pub fn predict_proba(&self, inputs: &ModelInputs) -> Result<Vec<Array2<f64>>> {
        let mut g = Graph::new(&self.params);
        let outs = self.forward(&mut g, inputs, &mut Mode::eval())?;
        Ok(outs.into_iter().map(|v| g.matrix(v).to_owned()).collect())
    }
}

/// `Σ wᵢ·Lᵢ`.
pub fn mtl_loss(losses: &[f64], weights: &[f64]) -> Result<f64> {
    if losses.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} losses with {} weights",
            losses.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::invalid(format!("negative task weight in {weights:?}")));
    }
    Ok(losses.iter().zip(weights).map(|(l, w)| l * w).sum())
}
