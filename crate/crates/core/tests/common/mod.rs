#![allow(dead_code)]

use memotion::autograd::{Graph, Var};
use memotion::dataset::{generate_synthetic, ColumnSignal, MemeSample, SignalKind, SignalSpec};
use memotion::encoders::{BiLstmConfig, CnnConfig, ConvBlock};
use memotion::fusion::{EarlyFusionConfig, FusionStrategy};
use memotion::model::{ImageEncoderSpec, ModelDims, ModelSpec, TextEncoderSpec};
use memotion::params::{rng_stream, ParamId, ParamStore};
use memotion::textpipe::{build_vocab, preprocess_text, Vocab};
use memotion::{LabelColumn, Task};
use rand::seq::index::sample;
use rand::Rng;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

/// Compares backward-pass gradients of the scalar `loss` against central
/// differences for `ids`. Tensors with more than `max_coords` entries are
/// checked on a random subset. Returns the worst relative error.
pub fn gradcheck(
    store: &mut ParamStore,
    ids: &[ParamId],
    max_coords: usize,
    seed: u64,
    loss: impl Fn(&mut Graph<'_>) -> Var,
) -> f64 {
    let eval = |store: &ParamStore| {
        let mut g = Graph::new(store);
        let out = loss(&mut g);
        g.value(out).iter().copied().sum::<f64>()
    };
    let analytic: Vec<_> = {
        let mut g = Graph::new(store);
        let out = loss(&mut g);
        let grads = g.backward(out);
        ids.iter()
            .map(|&id| {
                grads
                    .param(id)
                    .map(|g| g.as_standard_layout().into_owned())
                    .unwrap_or_else(|| ndarray::ArrayD::zeros(store.get(id).raw_dim()))
            })
            .collect()
    };
    let mut rng = rng_stream(seed, 77);
    let mut worst: f64 = 0.0;
    for (&id, grad) in ids.iter().zip(&analytic) {
        let n = store.get(id).len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            sample(&mut rng, n, max_coords).into_vec()
        };
        for k in coords {
            let orig = store.get(id).as_slice().unwrap()[k];
            store.get_mut(id).as_slice_mut().unwrap()[k] = orig + EPS;
            let up = eval(store);
            store.get_mut(id).as_slice_mut().unwrap()[k] = orig - EPS;
            let down = eval(store);
            store.get_mut(id).as_slice_mut().unwrap()[k] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            let a = grad.as_slice().unwrap()[k];
            let e = rel_err(a, numeric);
            assert!(
                e < TOL,
                "`{}`[{k}]: analytic {a:e} vs numeric {numeric:e} (rel {e:e})",
                store.entry(id).name
            );
            worst = worst.max(e);
        }
    }
    worst
}

/// Moves every trainable value by up to ±`scale` so zero-initialised
/// biases do not sit exactly on a rectifier kink.
pub fn jitter(store: &mut ParamStore, scale: f64, seed: u64) {
    let mut rng = rng_stream(seed, 78);
    for id in store.trainable_ids().collect::<Vec<_>>() {
        store.get_mut(id).mapv_inplace(|v| v + rng.gen_range(-scale..scale));
    }
}

pub fn toy_bilstm(vocab_size: usize) -> BiLstmConfig {
    BiLstmConfig {
        vocab_size,
        max_len: 12,
        embedding_dim: 8,
        lstm_units: 8,
        layers: 1,
        dropout: 0.1,
        recurrent_dropout: 0.0,
    }
}

/// 16px input, two conv blocks with pooling, one dense layer of 16.
pub fn toy_cnn() -> CnnConfig {
    CnnConfig {
        input_size: 16,
        channels: 3,
        blocks: vec![ConvBlock::new(4, 3, 1, 1, true), ConvBlock::new(8, 3, 1, 1, true)],
        pool_size: 2,
        pool_stride: 2,
        dense: vec![16],
        dropout: 0.1,
    }
}

pub fn toy_dims() -> ModelDims {
    ModelDims {
        modality_vec: 16,
        joint_vec: 32,
        per_task_hidden: None,
        gmu_hidden: 16,
    }
}

/// BiLSTM + CNN at toy widths with the given fusion and tasks.
pub fn toy_spec(fusion: FusionStrategy, tasks: Vec<Task>, vocab_size: usize) -> ModelSpec {
    let dims = toy_dims();
    ModelSpec {
        text: TextEncoderSpec::BiLstm(toy_bilstm(vocab_size)),
        image: ImageEncoderSpec::Cnn(toy_cnn()),
        fusion,
        mtl: tasks.len() > 1,
        tasks,
        early: EarlyFusionConfig {
            projection: Some(dims.modality_vec),
            ..Default::default()
        },
        dims,
        task_weights: None,
    }
}

pub fn vocab_for(data: &[MemeSample]) -> Vocab {
    let corpus: Vec<_> = data.iter().map(|s| preprocess_text(&s.text)).collect();
    build_vocab(&corpus, 1, None).unwrap()
}

pub fn synthetic(n: usize, column: LabelColumn, kind: SignalKind, seed: u64) -> Vec<MemeSample> {
    generate_synthetic(n, &SignalSpec::single(column, ColumnSignal::new(kind)), seed).unwrap()
}
