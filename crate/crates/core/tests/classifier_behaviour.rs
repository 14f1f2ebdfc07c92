//! Classifier geometry, attention, losses, training schedule, metrics and ablation.

use kfgnet::classifier::*;
use kfgnet::data::{generate_synthetic, kfold_split, Label, SynthConfig, VideoSample};
use kfgnet::kernels::Mode;
use kfgnet::rng;
use kfgnet::Tensor;
use proptest::prelude::*;

mod common;
use common::random;

fn unit_random(shape: &[usize], seed: u64) -> Tensor {
    random(shape, seed).map(|v| 0.5 + 0.5 * v)
}

fn videos(n: usize, seed: u64) -> Vec<VideoSample> {
    let cfg = SynthConfig {
        videos: n,
        frames: 24,
        width: 64,
        height: 64,
        clip_len: 16,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg, seed).unwrap()
}

fn compact_samples(videos: &[VideoSample], config: &ClassifierConfig) -> Vec<ClassifierSample> {
    let keys: Vec<usize> = videos.iter().map(|v| v.key_frame_index).collect();
    prepare_samples(videos, &keys, ClipSampling::KeyFrame, config).unwrap()
}

fn quick_train() -> ClassifierTrainConfig {
    ClassifierTrainConfig {
        epochs: 1,
        epochs_late: 1,
        batch_size: 4,
        ..ClassifierTrainConfig::default()
    }
}

#[test]
fn canonical_trace_matches_documented_shapes() {
    let trace = ClassifierConfig::canonical().trace().unwrap();
    assert_eq!(
        trace.conv,
        [
            [16, 32, 112, 112],
            [32, 32, 56, 56],
            [64, 16, 28, 28],
            [64, 4, 7, 7]
        ]
    );
    assert_eq!(trace.pool1, [64, 8, 14, 14]);
    assert_eq!(trace.pool2, [64, 2, 3, 3]);
    assert_eq!(trace.attention_sides, [14, 6, 2, 1]);
    assert_eq!(trace.temporal_windows, 8);
    assert_eq!(trace.head_len, 1728);
    assert_eq!(trace.head_len, 27 * 64);
}

#[test]
fn canonical_forward_yields_one_probability_and_eight_weights() {
    let model = ClassifierModel::new(ClassifierConfig::canonical(), 1, 0).unwrap();
    let x = unit_random(&[1, 1, 32, 112, 112], 2);
    let mut r = rng::stream(1, rng::DROPOUT, 0);
    let cache = model.forward(&x, Mode::Eval, false, &mut r).unwrap();
    assert_eq!(cache.probs.len(), 1);
    assert!(cache.probs[0] > 0.0 && cache.probs[0] < 1.0);
    let v = cache.v_temp.unwrap();
    assert_eq!(v.shape(), &[1, 8]);
    assert!(v.data().iter().all(|&g| g > 0.0 && g < 2.0));
}

#[test]
fn compact_and_reduced_traces() {
    let c = ClassifierConfig::compact().trace().unwrap();
    assert_eq!(
        c.conv,
        [
            [4, 16, 28, 28],
            [8, 16, 28, 28],
            [8, 8, 28, 28],
            [8, 4, 7, 7]
        ]
    );
    assert_eq!(c.pool1, [8, 4, 14, 14]);
    assert_eq!(c.pool2, [8, 2, 3, 3]);
    assert_eq!(c.attention_sides, [14, 6, 2, 1]);
    assert_eq!(c.head_len, 216);
    let r = ClassifierConfig::reduced().trace().unwrap();
    assert_eq!(r.head_len, 54);
    assert_eq!(r.temporal_windows, 4);
}

#[test]
fn wrong_input_shape_is_a_configuration_error() {
    let model = ClassifierModel::new(ClassifierConfig::reduced(), 1, 0).unwrap();
    let x = Tensor::zeros(&[1, 1, 8, 27, 28]);
    assert!(matches!(
        model.predict(&x),
        Err(kfgnet::Error::Shape(_)) | Err(kfgnet::Error::Config(_))
    ));
}

#[test]
fn bypassed_attention_equals_model_without_branch() {
    let model = ClassifierModel::new(ClassifierConfig::compact(), 3, 0).unwrap();
    let plain = model.without_attention();
    let x = unit_random(&[2, 1, 16, 28, 28], 4);
    let mut r = rng::stream(0, rng::DROPOUT, 0);
    let bypass = model.forward(&x, Mode::Eval, true, &mut r).unwrap();
    assert!(bypass.v_temp.is_none());
    assert_eq!(bypass.probs, plain.predict(&x).unwrap());
}

#[test]
fn eval_forward_is_bitwise_repeatable() {
    let model = ClassifierModel::new(ClassifierConfig::compact(), 5, 0).unwrap();
    let x = unit_random(&[3, 1, 16, 28, 28], 6);
    let a = model.predict(&x).unwrap();
    let b = model.predict(&x).unwrap();
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

/// Applies the same permutation of the `H*W` positions to every slice.
fn permute_space(x: &Tensor, perm: &[usize]) -> Tensor {
    let s = x.shape();
    let hw = s[3] * s[4];
    let mut out = x.clone();
    for (dst, src) in out.data_mut().chunks_mut(hw).zip(x.data().chunks(hw)) {
        for (i, &p) in perm.iter().enumerate() {
            dst[i] = src[p];
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn temporal_weighting_commutes_with_spatial_permutation(seed in any::<u64>(), n in 1usize..3, c in 1usize..4, d in 1usize..5) {
        use rand::seq::SliceRandom;
        let (h, w) = (3, 4);
        let x = random(&[n, c, d, h, w], seed);
        let weights: Vec<f64> = random(&[n * d], seed ^ 1).data().iter().map(|v| 1.0 + v).collect();
        let mut perm: Vec<usize> = (0..h * w).collect();
        perm.shuffle(&mut rng::stream(seed, "perm", 0));
        let a = apply_temporal_weights(&permute_space(&x, &perm), &weights).unwrap();
        let b = permute_space(&apply_temporal_weights(&x, &weights).unwrap(), &perm);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn metrics_accuracy_identity(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
        prop_assume!(tp + fp + tn + fn_ > 0);
        let m = ClassificationMetrics::from_counts(tp, fp, tn, fn_);
        prop_assert_eq!(m.accuracy, (tp + tn) as f64 / (tp + tn + fp + fn_) as f64);
        for v in m.summary().values() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn loss_total_is_exact_sum(l_cls in 0.0f64..10.0, l_motion in 0.0f64..2.0) {
        let r = LossRecord::new(l_cls, l_motion);
        prop_assert_eq!(r.total, l_cls + l_motion);
    }

    #[test]
    fn probabilities_stay_open_interval(seed in 0u64..500) {
        let model = ClassifierModel::new(ClassifierConfig::reduced(), seed, 0).unwrap();
        let x = unit_random(&[2, 1, 8, 28, 28], seed);
        let p = model.predict(&x).unwrap();
        prop_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn loss_record_example() {
    let r = LossRecord::new(0.5, 0.2);
    assert_eq!(r.total, 0.5 + 0.2);
    assert!((r.total - 0.7).abs() < 1e-15);
}

#[test]
fn aligned_confident_batch_has_near_zero_loss() {
    let v_motion = Tensor::new(vec![2, 2], vec![0.3, 0.6, 0.9, 0.1]).unwrap();
    let v_temp = v_motion.map(|v| 2.0 * v);
    let r = compute_losses(&[1.0 - 1e-12, 1e-12], &[1.0, 0.0], Some(&v_temp), &v_motion).unwrap();
    assert!(
        r.l_cls < 1e-10 && r.l_motion.abs() < 1e-12 && r.total < 1e-10,
        "{r:?}"
    );
    let off = compute_losses(&[0.5], &[1.0], None, &Tensor::zeros(&[1, 2])).unwrap();
    assert_eq!(off.l_motion, 0.0);
}

#[test]
fn metric_cases() {
    let m = ClassificationMetrics::from_counts(3, 1, 4, 2);
    assert_eq!(m.precision, 0.75);
    assert_eq!(m.sensitivity, 0.6);
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(m.specificity, 0.8);
    assert_eq!(m.accuracy, 0.7);
    let perfect =
        ClassificationMetrics::from_predictions(&[0.9, 0.1, 0.7, 0.2], &[1.0, 0.0, 1.0, 0.0]);
    assert_eq!(perfect.summary().values(), [1.0; 5]);
    let constant = ClassificationMetrics::from_predictions(&[0.9; 4], &[1.0, 1.0, 0.0, 0.0]);
    assert_eq!(constant.sensitivity, 1.0);
    assert_eq!(constant.specificity, 0.0);
    let none = ClassificationMetrics::from_counts(0, 0, 5, 0);
    assert!(none.undefined.contains(&"sensitivity".to_string()));
    assert_eq!(none.precision, 0.0);
}

#[test]
fn learning_rate_drops_after_first_stage() {
    let cfg = ClassifierTrainConfig::default();
    assert_eq!(cfg.lr_at(19), 1e-3);
    assert_eq!(cfg.lr_at(20), 1e-4);
    let config = ClassifierConfig::compact();
    let samples = compact_samples(&videos(6, 1), &config);
    let mut model = ClassifierModel::new(config, 1, 0).unwrap();
    let history = train_classifier(&mut model, &samples, &quick_train(), 1, 0).unwrap();
    assert_eq!(history.epochs.len(), 2);
    assert_eq!(history.epochs[0].lr, 1e-3);
    assert_eq!(history.epochs[1].lr, 1e-4);
    assert_eq!(history.optimizer.lr, 1e-4);
}

#[test]
fn training_is_bitwise_reproducible() {
    let config = ClassifierConfig::compact();
    let samples = compact_samples(&videos(6, 2), &config);
    let run = || {
        let mut m = ClassifierModel::new(config.clone(), 2, 0).unwrap();
        let h = train_classifier(&mut m, &samples, &quick_train(), 2, 0).unwrap();
        (m, h)
    };
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(h1, h2);
    assert_eq!(m1, m2);
}

#[test]
fn single_class_training_set_is_rejected() {
    let config = ClassifierConfig::compact();
    let benign: Vec<VideoSample> = videos(8, 3)
        .into_iter()
        .filter(|v| v.label == Label::Benign)
        .collect();
    let samples = compact_samples(&benign, &config);
    let mut model = ClassifierModel::new(config, 3, 0).unwrap();
    let err = train_classifier(&mut model, &samples, &quick_train(), 3, 0).unwrap_err();
    assert!(err.to_string().contains("single class"), "{err}");
}

#[test]
fn uniform_sampling_spreads_over_the_video() {
    let config = ClassifierConfig::compact();
    let vids = videos(2, 4);
    let keys: Vec<usize> = vids.iter().map(|v| v.key_frame_index).collect();
    let uni = prepare_samples(&vids, &keys, ClipSampling::Uniform, &config).unwrap();
    for (s, v) in uni.iter().zip(&vids) {
        assert_eq!(
            s.clip.source_indices,
            kfgnet::data::uniform_indices(v.n_frames(), 16)
        );
        assert_eq!(s.v_motion.len(), 4);
    }
}

#[test]
fn ablation_produces_eight_rows_and_history_columns_follow_attention() {
    let vids = videos(8, 5);
    let keys: Vec<usize> = vids.iter().map(|v| v.key_frame_index).collect();
    let items: Vec<(String, Label)> = vids.iter().map(|v| (v.id.clone(), v.label)).collect();
    let split = kfold_split(&items, 2, 5).unwrap();
    let train = ClassifierTrainConfig {
        epochs: 1,
        epochs_late: 0,
        batch_size: 4,
        ..ClassifierTrainConfig::default()
    };
    let rows = ablate(
        &vids,
        &keys,
        &split,
        &ClassifierConfig::compact(),
        &train,
        5,
    )
    .unwrap();
    assert_eq!(rows.len(), 8);
    let mut csv = Vec::new();
    write_ablation_csv(&mut csv, &rows).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 9);
    assert_eq!(
        lines[0],
        "variant,sampling,spp,attention,accuracy,sensitivity,specificity,precision,f1"
    );
    assert!(lines[1].starts_with("keyframe+spp+attention,"));
    assert!(lines[8].starts_with("uniform+flatten+no-attention,"));
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 9));

    let with = &rows[0];
    let without = rows.iter().find(|r| !r.variant.attention).unwrap();
    let header = |h: &TrainHistory, attention: bool| {
        let mut out = Vec::new();
        write_history_csv(&mut out, h, attention).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(
        header(&with.histories[0], true),
        "epoch,lr,l_cls,l_motion,total"
    );
    assert_eq!(header(&without.histories[0], false), "epoch,lr,l_cls,total");
    assert!(without.histories[0]
        .epochs
        .iter()
        .all(|e| e.loss.l_motion == 0.0));
}
