mod common;

use common::{synthetic, toy_spec, vocab_for};
use memotion::dataset::SignalKind;
use memotion::encoders::BackboneRegistry;
use memotion::fusion::FusionStrategy;
use memotion::model::{build_model, build_model_with, ModelSpec};
use memotion::pipeline::Featurizer;
use memotion::training::{train, EarlyStoppingConfig, TrainConfig};
use memotion::{LabelColumn, Task, TaskGroup};

fn dense(i: usize, o: usize) -> usize {
    i * o + o
}

fn conv(cin: usize, filters: usize, k: usize) -> usize {
    filters * cin * k * k + filters
}

fn lstm_direction(input: usize, units: usize) -> usize {
    input * 4 * units + units * 4 * units + 4 * units
}

/// The image trunk at 224px: five conv layers, 5×5×256 after
/// the third pool, then two 1024-unit dense layers.
fn alexnet_params() -> usize {
    let side = {
        let mut s = (224 - 11) / 4 + 1; // 54
        s = (s - 3) / 2 + 1; // pool 26
        s = (s - 3) / 2 + 1; // conv2 keeps 26, pool 12
        (s - 3) / 2 + 1 // conv3..5 keep 12, pool 5
    };
    conv(3, 96, 11)
        + conv(96, 128, 5)
        + conv(128, 128, 3)
        + conv(128, 256, 3)
        + conv(256, 256, 3)
        + dense(side * side * 256, 1024)
        + dense(1024, 1024)
}

#[test]
fn single_task_parameter_count() {
    let vocab = 500;
    let model = build_model(&ModelSpec::bilstm_cnn_early(Task::Sentiment, vocab), 0).unwrap();
    let text = vocab * 32 + 2 * lstm_direction(32, 32);
    let fusion = dense(64, 64) + dense(1024, 64) + dense(64, 64) + dense(128, 128);
    let expected = text + alexnet_params() + fusion + dense(128, 3);
    assert_eq!(model.params.num_trainable(), expected);
}

#[test]
fn multitask_parameter_count() {
    let vocab = 300;
    let model = build_model(&ModelSpec::multitask(TaskGroup::B, vocab), 0).unwrap();
    let text = vocab * 32 + 2 * lstm_direction(32, 32) + 2 * lstm_direction(64, 32);
    let fusion = dense(64, 128) + dense(1024, 128) + dense(128, 128) + dense(256, 256);
    let heads: usize = [3, 2, 2, 2, 2].iter().map(|&k| dense(256, 128) + dense(128, k)).sum();
    assert_eq!(model.params.num_trainable(), text + alexnet_params() + fusion + heads);
}

#[test]
fn pretrained_parameter_count() {
    let model = build_model(&ModelSpec::pretrained_early(Task::Sentiment, "hashed-bow", "pooled-color"), 0).unwrap();
    // hashed-bow emits 64 values, pooled-color 4×4 cells × 3 channels
    let text = 2 * 64 + dense(64, 256);
    let image = dense(48, 768) + dense(768, 256);
    let fusion = 2 * 256 + 2 * 256;
    assert_eq!(model.params.num_trainable(), text + image + fusion + dense(512, 3));
}

#[test]
fn multitask_head_widths_on_the_full_model() {
    let data = synthetic(3, LabelColumn::Sentiment, SignalKind::Joint, 4);
    let vocab = vocab_for(&data);
    for (group, widths) in [(TaskGroup::B, vec![3, 2, 2, 2, 2]), (TaskGroup::C, vec![3, 4, 4, 4])] {
        let model = build_model(&ModelSpec::multitask(group, vocab.len()), 0).unwrap();
        let set = Featurizer::for_model(&model, Some(vocab.clone())).unwrap().encode(&data).unwrap();
        let probs = model.predict_proba(&set.all()).unwrap();
        let got: Vec<_> = probs.iter().map(|p| p.ncols()).collect();
        assert_eq!(got, widths);
        for p in &probs {
            assert_eq!(p.nrows(), 3);
            for row in p.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn batch_of_32_gives_32_rows_per_head() {
    let data = synthetic(32, LabelColumn::Humor, SignalKind::Joint, 5);
    let vocab = vocab_for(&data);
    let tasks = vec![Task::Sentiment, Task::Humor, Task::Sarcasm, Task::Offence, Task::Motivation];
    for fusion in [FusionStrategy::Early, FusionStrategy::Gmu] {
        let model = build_model(&toy_spec(fusion, tasks.clone(), vocab.len()), 2).unwrap();
        let set = Featurizer::for_model(&model, Some(vocab.clone())).unwrap().encode(&data).unwrap();
        let probs = model.predict_proba(&set.all()).unwrap();
        for (p, t) in probs.iter().zip(&tasks) {
            assert_eq!(p.dim(), (32, t.num_classes()));
        }
    }
}

#[test]
fn perturbing_one_head_leaves_the_others_bit_identical() {
    let data = synthetic(8, LabelColumn::Sentiment, SignalKind::Joint, 6);
    let vocab = vocab_for(&data);
    let tasks = vec![Task::Sentiment, Task::HumorScale, Task::SarcasmScale];
    let mut model = build_model(&toy_spec(FusionStrategy::Early, tasks.clone(), vocab.len()), 3).unwrap();
    let inputs = Featurizer::for_model(&model, Some(vocab)).unwrap().encode(&data).unwrap().all();
    let before = model.predict_proba(&inputs).unwrap();
    for j in 0..tasks.len() {
        let ids = model.heads()[j].param_ids();
        let saved: Vec<_> = ids.iter().map(|&id| model.params.get(id).clone()).collect();
        for &id in &ids {
            model.params.get_mut(id).mapv_inplace(|v| v + 0.3);
        }
        let after = model.predict_proba(&inputs).unwrap();
        for k in 0..tasks.len() {
            if k == j {
                assert_ne!(after[k], before[k]);
            } else {
                assert_eq!(after[k], before[k], "head {k} moved when head {j} changed");
            }
        }
        for (&id, v) in ids.iter().zip(saved) {
            *model.params.get_mut(id) = v;
        }
    }
    // the shared trunk feeds every head
    let trunk = model.trunk_param_ids();
    let id = trunk[trunk.len() - 1];
    model.params.get_mut(id).mapv_inplace(|v| v + 0.5);
    let after = model.predict_proba(&inputs).unwrap();
    for k in 0..tasks.len() {
        assert_ne!(after[k], before[k]);
    }
}

#[test]
fn builds_are_reproducible_per_seed() {
    let spec = toy_spec(FusionStrategy::Gmu, vec![Task::Sentiment, Task::Humor], 40);
    let a = build_model(&spec, 11).unwrap();
    let b = build_model(&spec, 11).unwrap();
    let c = build_model(&spec, 12).unwrap();
    let values = |m: &memotion::model::Model| m.params.iter().map(|(_, e)| e.value.clone()).collect::<Vec<_>>();
    assert_eq!(values(&a), values(&b));
    assert_ne!(values(&a), values(&c));
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = toy_spec(FusionStrategy::Early, vec![Task::Sentiment], 10);
    spec.fusion = FusionStrategy::Late;
    assert!(build_model(&spec, 0).is_err());

    let spec = toy_spec(FusionStrategy::Early, vec![Task::Sentiment, Task::Sentiment], 10);
    assert!(build_model(&spec, 0).is_err());

    let mut spec = toy_spec(FusionStrategy::Early, vec![Task::Sentiment, Task::Humor], 10);
    spec.task_weights = Some(vec![1.0]);
    assert!(build_model(&spec, 0).is_err());

    let spec = ModelSpec::pretrained_early(Task::Sentiment, "no-such-model", "pooled-color");
    let err = build_model(&spec, 0).unwrap_err().to_string();
    assert!(err.contains("no-such-model"), "{err}");
}

#[test]
fn constant_backbones_train_end_to_end() {
    let data = synthetic(40, LabelColumn::Sentiment, SignalKind::Joint, 7);
    let mut spec = ModelSpec::pretrained_early(Task::Sentiment, "constant-text", "constant-image");
    if let memotion::model::ImageEncoderSpec::Pretrained(c) = &mut spec.image {
        c.input_size = 16;
    }
    let registry = BackboneRegistry::with_stubs();
    let mut model = build_model_with(&spec, 0, &registry).unwrap();
    let set = Featurizer::for_model(&model, None).unwrap().encode(&data).unwrap();
    let cfg = TrainConfig {
        max_epochs: 3,
        early_stopping: EarlyStoppingConfig { patience: 3, min_delta: 0.0 },
        ..Default::default()
    };
    let history = train(&mut model, &set, &set, &cfg).unwrap();
    assert_eq!(history.epochs.len(), 3);
    assert!(history.epochs.iter().all(|e| e.train_loss.is_finite() && e.val_loss.is_finite()));
}
