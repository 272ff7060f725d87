//! Per-modality feature extractors: a masked BiLSTM for text, an
//! AlexNet-style CNN for images, and adapters for external backbones.

mod bilstm;
mod cnn;
mod image;
mod pretrained;

use serde::{Deserialize, Serialize};

use crate::autograd::Var;

pub use bilstm::{BiLstmConfig, BiLstmEncoder, TokenBatch};
pub use cnn::{CnnConfig, CnnEncoder, ConvBlock};
pub use image::{load_image, preprocess_image, resolve_image, save_png};
pub use pretrained::{
    pretrained_adapter, Backbone, BackboneInput, BackboneRegistry, ConstantBackbone, FreezePolicy,
    HashedBagOfWords, PooledColor, PretrainedConfig, PretrainedEncoder,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
}

/// A batch of feature vectors on the tape, one row per sample.
#[derive(Debug, Clone, Copy)]
pub struct Features {
    pub values: Var,
    pub modality: Modality,
    pub dim: usize,
}
