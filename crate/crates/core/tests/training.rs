mod common;

use common::{synthetic, toy_spec, vocab_for};
use memotion::dataset::SignalKind;
use memotion::fusion::FusionStrategy;
use memotion::model::build_model;
use memotion::autograd::Graph;
use memotion::layers::Mode;
use memotion::pipeline::{EncodedSet, Featurizer};
use memotion::training::{
    epoch_order, predict, Optimizer, OptimizerKind, train, weighted_cross_entropy, EarlyStoppingConfig, Imbalance, TrainConfig, TrainHistory,
};
use memotion::{LabelColumn, Task};

#[test]
fn overfits_joint_signal() {
    let data = synthetic(64, LabelColumn::Sentiment, SignalKind::Joint, 1);
    let vocab = vocab_for(&data);
    let mut model = build_model(&toy_spec(FusionStrategy::Early, vec![Task::Sentiment], vocab.len()), 1).unwrap();
    let set = Featurizer::for_model(&model, Some(vocab)).unwrap().encode(&data).unwrap();
    let cfg = TrainConfig {
        max_epochs: 200,
        early_stopping: EarlyStoppingConfig { patience: 200, min_delta: 0.0 },
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let history = train(&mut model, &set, &set, &cfg).unwrap();
    let preds = predict(&model, &set, 64).unwrap();
    let y = set.task_labels(Task::Sentiment);
    let acc = y.iter().zip(&preds.classes[0]).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
    eprintln!("acc {acc} after {} epochs (best {}), {:?}", history.stop_epoch, history.best_epoch, start.elapsed());
    assert!(acc >= 0.95);
}

fn small_run(seed: u64, imbalance: Imbalance) -> (TrainHistory, Vec<ndarray::ArrayD<f64>>) {
    let data = synthetic(48, LabelColumn::Sentiment, SignalKind::Joint, 9);
    let vocab = vocab_for(&data);
    let tasks = vec![Task::Sentiment, Task::Humor];
    let mut model = build_model(&toy_spec(FusionStrategy::Gmu, tasks, vocab.len()), seed).unwrap();
    let set = Featurizer::for_model(&model, Some(vocab)).unwrap().encode(&data).unwrap();
    let (tr, va): (Vec<usize>, Vec<usize>) = (0..set.len()).partition(|i| i % 4 != 0);
    let (tr, va) = (subset(&set, &tr), subset(&set, &va));
    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: 6,
        imbalance,
        seed,
        ..Default::default()
    };
    let history = train(&mut model, &tr, &va, &cfg).unwrap();
    let params = model.params.iter().map(|(_, e)| e.value.clone()).collect();
    (history, params)
}

fn subset(set: &EncodedSet, idx: &[usize]) -> EncodedSet {
    let inputs = set.gather(idx);
    EncodedSet {
        ids: idx.iter().map(|&i| set.ids[i].clone()).collect(),
        labels: idx.iter().map(|&i| set.labels[i]).collect(),
        tokens: inputs.tokens,
        texts: inputs.texts,
        images: inputs.images,
    }
}

#[test]
fn same_seed_same_history_and_weights() {
    for imbalance in [Imbalance::ClassWeights, Imbalance::Oversample] {
        let (h1, p1) = small_run(5, imbalance);
        let (h2, p2) = small_run(5, imbalance);
        assert_eq!(h1.to_jsonl().unwrap(), h2.to_jsonl().unwrap());
        assert_eq!(p1, p2);
        let (h3, _) = small_run(6, imbalance);
        assert_ne!(h1.to_jsonl().unwrap(), h3.to_jsonl().unwrap());
    }
}

#[test]
fn history_respects_patience() {
    let (h, _) = small_run(2, Imbalance::ClassWeights);
    assert!(h.stop_epoch <= h.best_epoch + 3);
    let best = h.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(h.epochs[h.best_epoch - 1].val_loss, best);
}

#[test]
fn oversampled_epochs_are_balanced() {
    let data = synthetic(60, LabelColumn::Sentiment, SignalKind::Joint, 3);
    let vocab = vocab_for(&data);
    let model = build_model(&toy_spec(FusionStrategy::Early, vec![Task::Sentiment], vocab.len()), 0).unwrap();
    let mut set = Featurizer::for_model(&model, Some(vocab)).unwrap().encode(&data).unwrap();
    // skew the labels: 40 / 15 / 5
    for (i, l) in set.labels.iter_mut().enumerate() {
        l.sentiment = if i < 40 { 2 } else if i < 55 { 1 } else { 0 };
    }
    let y = set.task_labels(Task::Sentiment);
    let mut previous = None;
    for epoch in 1..=3 {
        let order = epoch_order(&set, Task::Sentiment, Imbalance::Oversample, 0, epoch).unwrap();
        let mut counts = [0; 3];
        for &i in &order {
            counts[y[i]] += 1;
        }
        assert_eq!(counts, [40, 40, 40]);
        assert_ne!(previous.as_ref(), Some(&order));
        previous = Some(order);
    }
}

/// One Adam step on a single sample, gradients and losses taken without
/// dropout.
fn single_step_improves(seed: u64) -> bool {
    let data = synthetic(1, LabelColumn::Sentiment, SignalKind::Joint, seed);
    let vocab = vocab_for(&data);
    let mut spec = toy_spec(FusionStrategy::Early, vec![Task::Sentiment], vocab.len());
    if let memotion::model::TextEncoderSpec::BiLstm(c) = &mut spec.text {
        c.dropout = 0.0;
    }
    if let memotion::model::ImageEncoderSpec::Cnn(c) = &mut spec.image {
        c.dropout = 0.0;
    }
    let mut model = build_model(&spec, seed).unwrap();
    let set = Featurizer::for_model(&model, Some(vocab)).unwrap().encode(&data).unwrap();
    let inputs = set.all();
    let y = set.task_labels(Task::Sentiment);
    let loss = |model: &memotion::model::Model| {
        let p = model.predict_proba(&inputs).unwrap();
        weighted_cross_entropy(p[0].view(), &y, &[1.0; 3]).unwrap()
    };
    let before = loss(&model);
    let grads = {
        let mut g = Graph::new(&model.params);
        let p = model.forward(&mut g, &inputs, &mut Mode::eval()).unwrap();
        let l = g.weighted_nll(p[0], &y, &[1.0; 3]).unwrap();
        g.backward(l)
    };
    let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-3, &model.params).unwrap();
    opt.step(&mut model.params, &grads);
    loss(&model) < before
}

#[test]
fn one_step_lowers_single_sample_loss() {
    let failures: Vec<u64> = (0..50).filter(|&s| !single_step_improves(s)).collect();
    assert!(failures.len() <= 2, "loss rose for seeds {failures:?}");
}

#[test]
fn empty_sets_are_rejected() {
    let data = synthetic(4, LabelColumn::Sentiment, SignalKind::Joint, 3);
    let vocab = vocab_for(&data);
    let mut model = build_model(&toy_spec(FusionStrategy::Early, vec![Task::Sentiment], vocab.len()), 0).unwrap();
    let set = Featurizer::for_model(&model, Some(vocab)).unwrap().encode(&data).unwrap();
    let empty = subset(&set, &[]);
    let cfg = TrainConfig::default();
    assert!(train(&mut model, &empty, &set, &cfg).is_err());
    assert!(train(&mut model, &set, &empty, &cfg).is_err());
}
