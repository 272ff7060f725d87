//! Turning samples into the tensors a particular model consumes.

use ndarray::{Array2, ArrayD, Axis, IxDyn};

use crate::autograd::Tensor;
use crate::dataset::{LabelValues, MemeSample};
use crate::encoders::{preprocess_image, resolve_image, TokenBatch};
use crate::error::{Error, Result};
use crate::model::{Model, ModelInputs};
use crate::tasks::Task;
use crate::textpipe::{encode_sequence, preprocess_text, Vocab};

/// What a model needs from each sample.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub vocab: Option<Vocab>,
    pub max_len: usize,
    pub tokens: bool,
    pub texts: bool,
    pub image_size: Option<usize>,
}

impl Featurizer {
    pub fn for_model(model: &Model, vocab: Option<Vocab>) -> Result<Self> {
        if model.needs_tokens() && vocab.is_none() {
            return Err(Error::invalid("a BiLSTM model needs a vocabulary"));
        }
        Ok(Featurizer {
            vocab,
            max_len: model.max_len().unwrap_or(0),
            tokens: model.needs_tokens(),
            texts: model.needs_texts(),
            image_size: model.image_size(),
        })
    }

    pub fn encode(&self, samples: &[MemeSample]) -> Result<EncodedSet> {
        let n = samples.len();
        let tokenised: Vec<Vec<String>> = samples.iter().map(|s| preprocess_text(&s.text)).collect();
        let tokens = match (&self.vocab, self.tokens) {
            (Some(vocab), true) => {
                let mut ids = Array2::zeros((n, self.max_len));
                let mut lengths = Vec::with_capacity(n);
                for (i, toks) in tokenised.iter().enumerate() {
                    let seq = encode_sequence(toks, vocab, self.max_len)?;
                    ids.row_mut(i).assign(&ndarray::aview1(&seq.ids));
                    lengths.push(seq.true_length);
                }
                Some(TokenBatch { ids, lengths })
            }
            _ => None,
        };
        let texts = self.texts.then(|| {
            tokenised
                .iter()
                .map(|t| t.iter().take(self.max_len).cloned().collect())
                .collect()
        });
        let images = match self.image_size {
            Some(size) => {
                let mut out = ArrayD::zeros(IxDyn(&[n, 3, size, size]));
                for (i, s) in samples.iter().enumerate() {
                    let grid = resolve_image(&s.id, &s.image)?;
                    let t = preprocess_image(&grid, size, true)?;
                    out.index_axis_mut(Axis(0), i).assign(&t);
                }
                Some(out)
            }
            None => None,
        };
        Ok(EncodedSet {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            labels: samples.iter().map(|s| s.labels).collect(),
            tokens,
            texts,
            images,
        })
    }
}

/// A whole split, preprocessed once.
#[derive(Debug, Clone)]
pub struct EncodedSet {
    pub ids: Vec<String>,
    pub labels: Vec<LabelValues>,
    pub tokens: Option<TokenBatch>,
    pub texts: Option<Vec<Vec<String>>>,
    pub images: Option<Tensor>,
}

impl EncodedSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn task_labels(&self, task: Task) -> Vec<usize> {
        self.labels.iter().map(|l| task.label(l)).collect()
    }

    /// Rows `indices`, in that order; repeats allowed.
    pub fn gather(&self, indices: &[usize]) -> ModelInputs {
        ModelInputs {
            tokens: self.tokens.as_ref().map(|t| TokenBatch {
                ids: t.ids.select(Axis(0), indices),
                lengths: indices.iter().map(|&i| t.lengths[i]).collect(),
            }),
            texts: self
                .texts
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i].clone()).collect()),
            images: self.images.as_ref().map(|im| im.select(Axis(0), indices)),
        }
    }

    pub fn all(&self) -> ModelInputs {
        self.gather(&(0..self.len()).collect::<Vec<_>>())
    }
}
