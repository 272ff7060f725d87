use serde::{Deserialize, Serialize};

use super::{Features, Modality};
use crate::autograd::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::layers::{dropout, Activation, Dense, Mode};
use crate::params::{glorot_uniform, zeros, ParamId, ParamStore, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Max-pool after the activation.
    pub pool: bool,
}

impl ConvBlock {
    pub const fn new(filters: usize, kernel: usize, stride: usize, padding: usize, pool: bool) -> Self {
        ConvBlock {
            filters,
            kernel,
            stride,
            padding,
            pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub input_size: usize,
    pub channels: usize,
    pub blocks: Vec<ConvBlock>,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub dense: Vec<usize>,
    /// Applied after every dense layer.
    pub dropout: f64,
}

impl Default for CnnConfig {
    /// The AlexNet layout: 11/5/3/3/3 kernels, stride 4 on the first block,
    /// 3×3 stride-2 pooling after blocks 1, 2 and 5.
    fn default() -> Self {
        CnnConfig {
            input_size: 224,
            channels: 3,
            blocks: vec![
                ConvBlock::new(96, 11, 4, 0, true),
                ConvBlock::new(128, 5, 1, 2, true),
                ConvBlock::new(128, 3, 1, 1, false),
                ConvBlock::new(256, 3, 1, 1, false),
                ConvBlock::new(256, 3, 1, 1, true),
            ],
            pool_size: 3,
            pool_stride: 2,
            dense: vec![1024, 1024],
            dropout: 0.4,
        }
    }
}

impl CnnConfig {
    /// Spatial side length after every block, or an error once it collapses.
    pub fn spatial_sizes(&self) -> Result<Vec<usize>> {
        let mut side = self.input_size;
        let mut out = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            let padded = side + 2 * b.padding;
            if b.filters == 0 || b.kernel == 0 || b.stride == 0 || padded < b.kernel {
                return Err(Error::invalid(format!("conv block {i} does not fit a {side}px input: {b:?}")));
            }
            side = (padded - b.kernel) / b.stride + 1;
            if b.pool {
                if side < self.pool_size || self.pool_stride == 0 {
                    return Err(Error::invalid(format!("pooling after block {i} on a {side}px map")));
                }
                side = (side - self.pool_size) / self.pool_stride + 1;
            }
            out.push(side);
        }
        Ok(out)
    }

    pub fn flatten_dim(&self) -> Result<usize> {
        let side = self.spatial_sizes()?.last().copied().unwrap_or(self.input_size);
        let maps = self.blocks.last().map_or(self.channels, |b| b.filters);
        Ok(maps * side * side)
    }

    pub fn output_dim(&self) -> Result<usize> {
        match self.dense.last() {
            Some(&d) => Ok(d),
            None => self.flatten_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.channels == 0 || self.dense.contains(&0) {
            return Err(Error::invalid(format!("CNN dimensions must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        self.flatten_dim().map(|_| ())
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    kernel: ParamId,
    bias: ParamId,
    block: ConvBlock,
}

/// Convolution blocks with rectified-linear activations, flatten, and
/// rectified-linear dense layers with dropout.
#[derive(Debug, Clone)]
pub struct CnnEncoder {
    pub config: CnnConfig,
    convs: Vec<ConvLayer>,
    dense: Vec<Dense>,
}

impl CnnEncoder {
    pub fn new(store: &mut ParamStore, name: &str, config: &CnnConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut in_c = config.channels;
        let mut convs = Vec::with_capacity(config.blocks.len());
        for (i, b) in config.blocks.iter().enumerate() {
            let k = b.kernel;
            let kernel = store.add(
                format!("{name}.conv{i}.kernel"),
                glorot_uniform(rng, &[b.filters, in_c, k, k], in_c * k * k, b.filters * k * k),
            );
            let bias = store.add(format!("{name}.conv{i}.bias"), zeros(&[b.filters]));
            convs.push(ConvLayer { kernel, bias, block: *b });
            in_c = b.filters;
        }
        let mut width = config.flatten_dim()?;
        let mut dense = Vec::with_capacity(config.dense.len());
        for (i, &d) in config.dense.iter().enumerate() {
            dense.push(Dense::new(store, &format!("{name}.dense{i}"), width, d, Activation::Relu, rng));
            width = d;
        }
        Ok(CnnEncoder {
            config: config.clone(),
            convs,
            dense,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim().expect("validated at construction")
    }

    /// `images`: `batch × channels × input_size × input_size`.
    pub fn encode(&self, g: &mut Graph<'_>, images: &Tensor, mode: &mut Mode<'_>) -> Result<Features> {
        let c = &self.config;
        let shape = images.shape();
        if shape.len() != 4 || shape[0] == 0 || shape[1] != c.channels || shape[2] != c.input_size || shape[3] != c.input_size {
            return Err(Error::shape(format!(
                "CNN expects batch x {} x {} x {}, got {shape:?}",
                c.channels, c.input_size, c.input_size
            )));
        }
        let batch = shape[0];
        let mut x = g.input(images.clone());
        for conv in &self.convs {
            let (k, b) = (g.param(conv.kernel), g.param(conv.bias));
            x = g.conv2d(x, k, b, conv.block.stride, conv.block.padding)?;
            x = g.relu(x);
            if conv.block.pool {
                x = g.maxpool2d(x, c.pool_size, c.pool_stride)?;
            }
        }
        let flat = g.value(x).len() / batch;
        x = g.reshape(x, &[batch, flat])?;
        for layer in &self.dense {
            x = layer.forward(g, x)?;
            x = dropout(g, x, c.dropout, mode)?;
        }
        Ok(Features {
            values: x,
            modality: Modality::Image,
            dim: self.output_dim(),
        })
    }
}
