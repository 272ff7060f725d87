use std::collections::HashMap;
use std::sync::Arc;

use memotion::autograd::Graph;
use memotion::dataset::{
    compute_class_weights, oversample_indices, split_train_val, validation_size, ClassDistribution, ImageRef,
    LabelValues, MemeSample, PixelGrid,
};
use memotion::evaluation::macro_f1;
use memotion::fusion::{gmu_fuse, late_fuse, GmuParams};
use memotion::params::{rng_stream, ParamStore};
use memotion::training::{argmax, weighted_cross_entropy, EarlyStopping, EarlyStoppingConfig};
use memotion::Task;
use ndarray::{Array2, ArrayD, IxDyn};
use proptest::prelude::*;
use rand::Rng;

/// Macro-F1 from a confusion map, written independently of the library.
fn macro_f1_oracle(t: &[usize], p: &[usize], k: usize) -> f64 {
    let mut cm: HashMap<(usize, usize), f64> = HashMap::new();
    for (&a, &b) in t.iter().zip(p) {
        *cm.entry((a, b)).or_default() += 1.0;
    }
    let cell = |a, b| cm.get(&(a, b)).copied().unwrap_or(0.0);
    let mut total = 0.0;
    for c in 0..k {
        let tp = cell(c, c);
        let predicted: f64 = (0..k).map(|a| cell(a, c)).sum();
        let actual: f64 = (0..k).map(|b| cell(c, b)).sum();
        // 2tp / (2tp + fp + fn) equals the harmonic mean of P and R
        let denom = predicted + actual;
        total += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    total / k as f64
}

fn labelled(k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>, usize)> {
    (1..=k).prop_flat_map(|k| {
        (0..80usize).prop_flat_map(move |n| {
            (
                prop::collection::vec(0..k, n),
                prop::collection::vec(0..k, n),
                Just(k),
            )
        })
    })
}

fn prob_vector(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn sample(i: usize, sentiment: u8) -> MemeSample {
    MemeSample {
        id: format!("m{i}"),
        text: String::new(),
        image: ImageRef::Pixels(Arc::new(PixelGrid::filled_rgb(1, 1, [0, 0, 0]))),
        labels: LabelValues {
            sentiment,
            ..Default::default()
        },
    }
}

proptest! {
    #[test]
    fn macro_f1_matches_oracle((t, p, k) in labelled(5)) {
        let got = macro_f1(&t, &p, k).unwrap();
        prop_assert!((got - macro_f1_oracle(&t, &p, k)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn macro_f1_ignores_pair_order((t, p, k) in labelled(4), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut pairs: Vec<_> = t.iter().copied().zip(p.iter().copied()).collect();
        pairs.shuffle(&mut rng_stream(seed, 0));
        let (t2, p2): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        prop_assert!((macro_f1(&t, &p, k).unwrap() - macro_f1(&t2, &p2, k).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_ignores_class_names((t, p, k) in labelled(4), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut names: Vec<usize> = (0..k).collect();
        names.shuffle(&mut rng_stream(seed, 0));
        let t2: Vec<_> = t.iter().map(|&c| names[c]).collect();
        let p2: Vec<_> = p.iter().map(|&c| names[c]).collect();
        prop_assert!((macro_f1(&t, &p, k).unwrap() - macro_f1(&t2, &p2, k).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn late_fusion_is_a_distribution_and_scale_free(
        k in 2usize..6,
        m in 1usize..5,
        seed in any::<u64>(),
        scale in 0.01f64..100.0,
    ) {
        let mut rng = rng_stream(seed, 0);
        let probs: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let v: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = v.iter().sum();
                v.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let weights: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..2.0)).collect();
        let refs: Vec<&[f64]> = probs.iter().map(Vec::as_slice).collect();
        let fused = late_fuse(&refs, &weights).unwrap();
        prop_assert!((fused.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(fused.iter().all(|&v| v >= 0.0));
        let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let fused2 = late_fuse(&refs, &scaled).unwrap();
        prop_assert_eq!(argmax(&fused), argmax(&fused2));
        for (a, b) in fused.iter().zip(&fused2) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn late_fusion_of_one_model_is_identity(p in prob_vector(4), w in 0.1f64..5.0) {
        let fused = late_fuse(&[&p], &[w]).unwrap();
        for (a, b) in fused.iter().zip(&p) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn class_weights_restore_the_present_share(counts in prop::collection::vec(0usize..50, 3)) {
        prop_assume!(counts.iter().sum::<usize>() > 0);
        let dist = ClassDistribution { task: Task::Sentiment, counts: counts.iter().copied().enumerate().collect() };
        let w = compute_class_weights(&dist).unwrap();
        let weighted: f64 = counts.iter().zip(&w.weights).map(|(&n, &w)| n as f64 * w).sum();
        // empty classes get weight 0, so only the present share survives
        let present = counts.iter().filter(|&&n| n > 0).count() as f64;
        let want = counts.iter().sum::<usize>() as f64 * present / 3.0;
        prop_assert!((weighted - want).abs() < 1e-9);
        prop_assert_eq!(w.has_warning(), counts.contains(&0));
    }

    #[test]
    fn oversampling_balances_every_class(
        labels in prop::collection::vec(0usize..3, 3..60),
        seed in any::<u64>(),
    ) {
        prop_assume!((0..3).all(|c| labels.contains(&c)));
        let idx = oversample_indices(&labels, 3, seed).unwrap();
        let mut counts = [0usize; 3];
        for &i in &idx {
            counts[labels[i]] += 1;
        }
        let majority = (0..3).map(|c| labels.iter().filter(|&&y| y == c).count()).max().unwrap();
        prop_assert_eq!(counts, [majority; 3]);
        prop_assert_eq!(&idx[..labels.len()], &(0..labels.len()).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn split_partitions_and_stratifies(
        labels in prop::collection::vec(0u8..3, 4..120),
        frac in 0.05f64..0.6,
        seed in any::<u64>(),
        stratify in any::<bool>(),
    ) {
        let n = labels.len();
        let n_val = validation_size(n, frac);
        prop_assume!(n_val > 0 && n_val < n);
        let data: Vec<_> = labels.iter().enumerate().map(|(i, &y)| sample(i, y)).collect();
        let split = split_train_val(&data, frac, seed, stratify).unwrap();
        prop_assert_eq!(split.validation.len(), n_val);
        let mut ids: Vec<_> = split.train.iter().chain(&split.validation).map(|s| s.id.clone()).collect();
        ids.sort();
        let mut want: Vec<_> = data.iter().map(|s| s.id.clone()).collect();
        want.sort();
        prop_assert_eq!(ids, want);
        if stratify {
            for c in 0..3u8 {
                let total = labels.iter().filter(|&&y| y == c).count() as f64;
                let got = split.validation.iter().filter(|s| s.labels.sentiment == c).count() as f64;
                prop_assert!((got - total * n_val as f64 / n as f64).abs() < 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn early_stopping_never_overruns_patience(
        losses in prop::collection::vec(0.0f64..10.0, 1..60),
        patience in 1usize..6,
    ) {
        let mut es = EarlyStopping::new(EarlyStoppingConfig { patience, min_delta: 0.0 });
        let mut stop_epoch = losses.len();
        for (i, &l) in losses.iter().enumerate() {
            if es.update(i + 1, l).1 {
                stop_epoch = i + 1;
                break;
            }
        }
        prop_assert!(stop_epoch <= es.best_epoch + patience);
        let seen = &losses[..stop_epoch];
        let min = seen.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(es.best, min);
        // first occurrence of the minimum
        prop_assert_eq!(seen.iter().position(|&l| l == min).unwrap() + 1, es.best_epoch);
    }

    #[test]
    fn unit_weighted_ce_is_mean_nll(rows in prop::collection::vec(prob_vector(3), 1..20), seed in any::<u64>()) {
        let mut rng = rng_stream(seed, 0);
        let labels: Vec<usize> = rows.iter().map(|_| rng.gen_range(0..3)).collect();
        let probs = Array2::from_shape_fn((rows.len(), 3), |(i, j)| rows[i][j]);
        let ce = weighted_cross_entropy(probs.view(), &labels, &[1.0; 3]).unwrap();
        let want = rows.iter().zip(&labels).map(|(r, &y)| -r[y].ln()).sum::<f64>() / rows.len() as f64;
        prop_assert!((ce - want).abs() < 1e-10);
    }
}

fn gmu_case(seed: u64) -> (ParamStore, GmuParams, ArrayD<f64>, ArrayD<f64>) {
    let mut rng = rng_stream(seed, 0);
    let (dt, dv, dh, b) = (
        rng.gen_range(1..8),
        rng.gen_range(1..8),
        rng.gen_range(1..8),
        rng.gen_range(1..5),
    );
    let mut store = ParamStore::new();
    let p = GmuParams::new(&mut store, "gmu", dt, dv, dh, &mut rng).unwrap();
    for id in [p.b_text, p.b_image, p.b_gate] {
        store.get_mut(id).mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    }
    let xt = ArrayD::from_shape_fn(IxDyn(&[b, dt]), |_| rng.gen_range(-3.0..3.0));
    let xv = ArrayD::from_shape_fn(IxDyn(&[b, dv]), |_| rng.gen_range(-3.0..3.0));
    (store, p, xt, xv)
}

/// `tanh(x·W + b)` computed outside the tape.
fn branch(x: &ArrayD<f64>, w: &ArrayD<f64>, b: &ArrayD<f64>) -> Array2<f64> {
    let x = x.view().into_dimensionality::<ndarray::Ix2>().unwrap();
    let w = w.view().into_dimensionality::<ndarray::Ix2>().unwrap();
    let b = b.view().into_dimensionality::<ndarray::Ix1>().unwrap();
    (x.dot(&w) + &b).mapv(f64::tanh)
}

fn run_gmu(store: &ParamStore, p: &GmuParams, xt: &ArrayD<f64>, xv: &ArrayD<f64>) -> Array2<f64> {
    let mut g = Graph::new(store);
    let (t, v) = (g.input(xt.clone()), g.input(xv.clone()));
    let h = gmu_fuse(&mut g, t, v, p).unwrap();
    g.value(h).clone().into_dimensionality().unwrap()
}

#[test]
fn gmu_output_is_a_convex_combination_of_the_branches() {
    for seed in 0..1000 {
        let (store, p, xt, xv) = gmu_case(seed);
        let h = run_gmu(&store, &p, &xt, &xv);
        let ht = branch(&xt, store.get(p.w_text), store.get(p.b_text));
        let hv = branch(&xv, store.get(p.w_image), store.get(p.b_image));
        for ((&h, &a), &b) in h.iter().zip(&ht).zip(&hv) {
            assert!(h >= a.min(b) - 1e-12 && h <= a.max(b) + 1e-12, "seed {seed}: {h} outside [{a}, {b}]");
        }
    }
}

#[test]
fn saturated_gate_selects_one_branch() {
    for seed in 0..50 {
        let (mut store, p, xt, xv) = gmu_case(seed);
        store.get_mut(p.w_gate).fill(0.0);
        let ht = branch(&xt, store.get(p.w_text), store.get(p.b_text));
        let hv = branch(&xv, store.get(p.w_image), store.get(p.b_image));
        for (bias, want) in [(30.0, &ht), (-30.0, &hv)] {
            store.get_mut(p.b_gate).fill(bias);
            let h = run_gmu(&store, &p, &xt, &xv);
            let worst = h.iter().zip(want.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-9, "seed {seed}, b_z {bias}: {worst:e}");
        }
    }
}
