use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{Features, Modality};
use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{dropout, Mode};
use crate::params::{glorot_uniform, zeros, ParamId, ParamStore, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiLstmConfig {
    /// Filled from the vocabulary when the model is built from a config.
    pub vocab_size: usize,
    pub max_len: usize,
    pub embedding_dim: usize,
    pub lstm_units: usize,
    /// Stacked bidirectional layers; all but the last feed their full
    /// output sequence to the next.
    pub layers: usize,
    /// Applied to the encoder output.
    pub dropout: f64,
    /// Applied to the hidden state entering the recurrent transform, with
    /// one mask per sequence.
    pub recurrent_dropout: f64,
}

impl Default for BiLstmConfig {
    fn default() -> Self {
        BiLstmConfig {
            vocab_size: 0,
            max_len: 64,
            embedding_dim: 32,
            lstm_units: 32,
            layers: 1,
            dropout: 0.5,
            recurrent_dropout: 0.2,
        }
    }
}

impl BiLstmConfig {
    pub fn output_dim(&self) -> usize {
        2 * self.lstm_units
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.max_len == 0 || self.embedding_dim == 0 || self.lstm_units == 0 || self.layers == 0 {
            return Err(Error::invalid(format!("BiLSTM dimensions must be positive: {self:?}")));
        }
        for rate in [self.dropout, self.recurrent_dropout] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Right-padded token ids for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    /// `batch × max_len`.
    pub ids: Array2<usize>,
    pub lengths: Vec<usize>,
}

impl TokenBatch {
    pub fn batch_size(&self) -> usize {
        self.ids.nrows()
    }
}

#[derive(Debug, Clone)]
struct LstmCell {
    kernel: ParamId,
    recurrent: ParamId,
    bias: ParamId,
    units: usize,
}

impl LstmCell {
    fn new(store: &mut ParamStore, name: &str, input_dim: usize, units: usize, rng: &mut Rng) -> Self {
        let kernel = store.add(
            format!("{name}.kernel"),
            glorot_uniform(rng, &[input_dim, 4 * units], input_dim, 4 * units),
        );
        let recurrent = store.add(
            format!("{name}.recurrent"),
            glorot_uniform(rng, &[units, 4 * units], units, 4 * units),
        );
        // gate order i, f, g, o; forget gate starts open
        let mut b = zeros(&[4 * units]);
        b.slice_mut(ndarray::s![units..2 * units]).fill(1.0);
        let bias = store.add(format!("{name}.bias"), b);
        LstmCell {
            kernel,
            recurrent,
            bias,
            units,
        }
    }

    /// Runs one direction and returns the hidden state after every
    /// position. Positions masked out carry the previous state unchanged.
    fn run(
        &self,
        g: &mut Graph<'_>,
        inputs: &[Var],
        masks: &[StepMask],
        reverse: bool,
        recurrent_dropout: f64,
        mode: &mut Mode<'_>,
    ) -> Result<Vec<Var>> {
        let batch = g.shape(inputs[0])[0];
        let u = self.units;
        let (w, r, b) = (g.param(self.kernel), g.param(self.recurrent), g.param(self.bias));
        let mut h = g.input(zeros(&[batch, u]));
        let mut c = g.input(zeros(&[batch, u]));
        let rmask = mode.dropout_mask(&[batch, u], recurrent_dropout);
        let mut states = vec![h; inputs.len()];
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for t in order {
            let mask = &masks[t];
            if let StepMask::None = mask {
                states[t] = h;
                continue;
            }
            let h_in = match &rmask {
                Some(m) => g.mul_const(h, m.clone())?,
                None => h,
            };
            let xw = g.matmul(inputs[t], w)?;
            let hr = g.matmul(h_in, r)?;
            let z = g.add(xw, hr)?;
            let z = g.add_bias(z, b)?;
            let i = g.slice_cols(z, 0, u)?;
            let i = g.sigmoid(i);
            let f = g.slice_cols(z, u, 2 * u)?;
            let f = g.sigmoid(f);
            let cand = g.slice_cols(z, 2 * u, 3 * u)?;
            let cand = g.tanh(cand);
            let o = g.slice_cols(z, 3 * u, 4 * u)?;
            let o = g.sigmoid(o);
            let fc = g.mul(f, c)?;
            let ic = g.mul(i, cand)?;
            let c_new = g.add(fc, ic)?;
            let tc = g.tanh(c_new);
            let h_new = g.mul(o, tc)?;
            match mask {
                StepMask::All => {
                    h = h_new;
                    c = c_new;
                }
                StepMask::Partial { keep, hold } => {
                    h = blend(g, h_new, h, keep, hold)?;
                    c = blend(g, c_new, c, keep, hold)?;
                }
                StepMask::None => unreachable!(),
            }
            states[t] = h;
        }
        Ok(states)
    }
}

fn blend(g: &mut Graph<'_>, new: Var, old: Var, keep: &Tensor, hold: &Tensor) -> Result<Var> {
    let a = g.mul_const(new, keep.clone())?;
    let b = g.mul_const(old, hold.clone())?;
    g.add(a, b)
}

/// Which rows of the batch are inside their sequence at one position.
enum StepMask {
    All,
    None,
    Partial { keep: Tensor, hold: Tensor },
}

fn step_masks(lengths: &[usize], steps: usize, units: usize) -> Vec<StepMask> {
    (0..steps)
        .map(|t| {
            let live = lengths.iter().filter(|&&l| t < l).count();
            if live == lengths.len() {
                StepMask::All
            } else if live == 0 {
                StepMask::None
            } else {
                let keep = ArrayD::from_shape_fn(IxDyn(&[lengths.len(), units]), |ix| {
                    f64::from(u8::from(t < lengths[ix[0]]))
                });
                let hold = keep.mapv(|v| 1.0 - v);
                StepMask::Partial { keep, hold }
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
struct BiLayer {
    forward: LstmCell,
    backward: LstmCell,
}

/// Embedding, stacked bidirectional LSTM layers and output dropout. The
/// readout concatenates the forward state at the last real token with the
/// backward state at the first.
#[derive(Debug, Clone)]
pub struct BiLstmEncoder {
    pub config: BiLstmConfig,
    pub embedding: ParamId,
    layers: Vec<BiLayer>,
}

impl BiLstmEncoder {
    pub fn new(store: &mut ParamStore, name: &str, config: &BiLstmConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let embedding = store.add(
            format!("{name}.embedding"),
            glorot_uniform(
                rng,
                &[config.vocab_size, config.embedding_dim],
                config.vocab_size,
                config.embedding_dim,
            ),
        );
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input_dim = if l == 0 {
                config.embedding_dim
            } else {
                2 * config.lstm_units
            };
            layers.push(BiLayer {
                forward: LstmCell::new(store, &format!("{name}.lstm{l}.forward"), input_dim, config.lstm_units, rng),
                backward: LstmCell::new(store, &format!("{name}.lstm{l}.backward"), input_dim, config.lstm_units, rng),
            });
        }
        Ok(BiLstmEncoder {
            config: config.clone(),
            embedding,
            layers,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn encode(&self, g: &mut Graph<'_>, batch: &TokenBatch, mode: &mut Mode<'_>) -> Result<Features> {
        let (n, steps) = batch.ids.dim();
        if n == 0 || steps == 0 || batch.lengths.len() != n {
            return Err(Error::shape(format!(
                "token batch {n}x{steps} with {} lengths",
                batch.lengths.len()
            )));
        }
        if let Some(&l) = batch.lengths.iter().find(|&&l| l > steps) {
            return Err(Error::shape(format!("true length {l} exceeds {steps} positions")));
        }
        let table = g.param(self.embedding);
        let mut seq = Vec::with_capacity(steps);
        for t in 0..steps {
            let ids: Vec<usize> = batch.ids.column(t).to_vec();
            seq.push(g.embedding(table, &ids)?);
        }
        let masks = step_masks(&batch.lengths, steps, self.config.lstm_units);
        let rd = self.config.recurrent_dropout;
        let mut out = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let fwd = layer.forward.run(g, &seq, &masks, false, rd, mode)?;
            let bwd = layer.backward.run(g, &seq, &masks, true, rd, mode)?;
            if l + 1 == self.layers.len() {
                out = Some(g.concat_cols(&[fwd[steps - 1], bwd[0]])?);
            } else {
                seq = (0..steps)
                    .map(|t| g.concat_cols(&[fwd[t], bwd[t]]))
                    .collect::<Result<_>>()?;
            }
        }
        let values = dropout(g, out.expect("at least one layer"), self.config.dropout, mode)?;
        Ok(Features {
            values,
            modality: Modality::Text,
            dim: self.output_dim(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::rng_stream;

    fn config() -> BiLstmConfig {
        BiLstmConfig {
            vocab_size: 12,
            max_len: 6,
            embedding_dim: 4,
            lstm_units: 3,
            ..Default::default()
        }
    }

    fn batch() -> TokenBatch {
        TokenBatch {
            ids: Array2::from_shape_vec((3, 6), vec![2, 3, 4, 0, 0, 0, 5, 6, 7, 8, 9, 10, 0, 0, 0, 0, 0, 0]).unwrap(),
            lengths: vec![3, 6, 0],
        }
    }

    fn run(enc: &BiLstmEncoder, store: &ParamStore, batch: &TokenBatch) -> Array2<f64> {
        let mut g = Graph::new(store);
        let f = enc.encode(&mut g, batch, &mut Mode::eval()).unwrap();
        g.matrix(f.values).to_owned()
    }

    #[test]
    fn output_is_twice_the_units() {
        let mut store = ParamStore::new();
        let cfg = BiLstmConfig {
            vocab_size: 12,
            ..Default::default()
        };
        let enc = BiLstmEncoder::new(&mut store, "text", &cfg, &mut rng_stream(0, 0)).unwrap();
        assert_eq!(enc.output_dim(), 64);
        let out = run(&enc, &store, &batch());
        assert_eq!(out.dim(), (3, 64));
    }

    #[test]
    fn empty_sequence_encodes_to_zero() {
        let mut store = ParamStore::new();
        let enc = BiLstmEncoder::new(&mut store, "text", &config(), &mut rng_stream(1, 0)).unwrap();
        let out = run(&enc, &store, &batch());
        assert!(out.row(2).iter().all(|&v| v == 0.0));
        assert!(out.row(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn padding_content_is_ignored() {
        let mut store = ParamStore::new();
        let enc = BiLstmEncoder::new(&mut store, "text", &config(), &mut rng_stream(2, 0)).unwrap();
        let base = run(&enc, &store, &batch());
        let mut noisy = batch();
        noisy.ids[[0, 4]] = 11;
        noisy.ids[[2, 0]] = 7;
        assert_eq!(run(&enc, &store, &noisy), base);
    }

    #[test]
    fn inference_is_deterministic() {
        let mut store = ParamStore::new();
        let enc = BiLstmEncoder::new(&mut store, "text", &config(), &mut rng_stream(3, 0)).unwrap();
        assert_eq!(run(&enc, &store, &batch()), run(&enc, &store, &batch()));
    }

    #[test]
    fn stacked_layers_change_parameter_count() {
        let mut one = ParamStore::new();
        BiLstmEncoder::new(&mut one, "t", &config(), &mut rng_stream(0, 0)).unwrap();
        let mut two = ParamStore::new();
        let cfg = BiLstmConfig { layers: 2, ..config() };
        let enc = BiLstmEncoder::new(&mut two, "t", &cfg, &mut rng_stream(0, 0)).unwrap();
        // second layer: 2 directions * (6*12 + 3*12 + 12)
        assert_eq!(two.num_trainable() - one.num_trainable(), 2 * (6 * 12 + 3 * 12 + 12));
        assert_eq!(run(&enc, &two, &batch()).dim(), (3, 6));
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut store = ParamStore::new();
        let enc = BiLstmEncoder::new(&mut store, "text", &config(), &mut rng_stream(0, 0)).unwrap();
        let mut g = Graph::new(&store);
        let mut bad = batch();
        bad.lengths = vec![7, 1, 1];
        assert!(enc.encode(&mut g, &bad, &mut Mode::eval()).is_err());
        let mut bad = batch();
        bad.ids[[0, 0]] = 99;
        assert!(enc.encode(&mut g, &bad, &mut Mode::eval()).is_err());
        assert!(BiLstmEncoder::new(&mut store, "x", &BiLstmConfig::default(), &mut rng_stream(0, 0)).is_err());
    }
}
