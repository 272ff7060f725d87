//! Building blocks shared by encoders, fusion and heads.

use ndarray::{ArrayD, IxDyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{filled, glorot_uniform, zeros, ParamId, ParamStore, Rng};

/// Forward-pass mode. Training carries the dropout generator and collects
/// batch-norm running-statistic updates for the caller to apply.
pub struct Mode<'r> {
    rng: Option<&'r mut Rng>,
    buffer_updates: Vec<(ParamId, Tensor)>,
}

impl Mode<'static> {
    pub fn eval() -> Self {
        Mode {
            rng: None,
            buffer_updates: Vec::new(),
        }
    }
}

impl<'r> Mode<'r> {
    pub fn train(rng: &'r mut Rng) -> Self {
        Mode {
            rng: Some(rng),
            buffer_updates: Vec::new(),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Inverted-dropout mask (`0` or `1 / (1 - rate)`), or `None` when not
    /// training or `rate == 0`.
    pub fn dropout_mask(&mut self, shape: &[usize], rate: f64) -> Option<Tensor> {
        let rng = self.rng.as_mut()?;
        if rate <= 0.0 {
            return None;
        }
        let keep = 1.0 - rate;
        Some(ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        }))
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }
}

pub fn dropout(g: &mut Graph<'_>, x: Var, rate: f64, mode: &mut Mode<'_>) -> Result<Var> {
    match mode.dropout_mask(g.shape(x), rate) {
        Some(mask) => g.mul_const(x, mask),
        None => Ok(x),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, g: &mut Graph<'_>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

/// Fully connected layer `act(x·W + b)` with `W: in × out`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            glorot_uniform(rng, &[input_dim, output_dim], input_dim, output_dim),
        );
        let bias = store.add(format!("{name}.bias"), zeros(&[output_dim]));
        Dense {
            weight,
            bias,
            input_dim,
            output_dim,
            activation,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        if g.shape(x).len() != 2 || g.shape(x)[1] != self.input_dim {
            return Err(Error::shape(format!(
                "dense layer expects {} features, got {:?}",
                self.input_dim,
                g.shape(x)
            )));
        }
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        let y = g.affine(x, w, b)?;
        Ok(self.activation.apply(g, y))
    }
}

/// Batch normalisation over the feature axis of a `batch × features` matrix.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub dim: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), filled(&[dim], 1.0)),
            beta: store.add(format!("{name}.beta"), zeros(&[dim])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), zeros(&[dim])),
            running_var: store.add_buffer(format!("{name}.running_var"), filled(&[dim], 1.0)),
            dim,
            momentum: 0.99,
            eps: 1e-3,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        if mode.is_training() {
            let (y, mean, var) = g.batch_norm_train(x, gamma, beta, self.eps)?;
            let store = g.params();
            let m = self.momentum;
            let new_mean = store.get(self.running_mean) * m + &mean * (1.0 - m);
            let new_var = store.get(self.running_var) * m + &var * (1.0 - m);
            mode.buffer_updates.push((self.running_mean, new_mean));
            mode.buffer_updates.push((self.running_var, new_var));
            Ok(y)
        } else {
            let store = g.params();
            let (mean, var) = (store.get(self.running_mean), store.get(self.running_var));
            g.batch_norm_infer(x, gamma, beta, mean, var, self.eps)
        }
    }
}
