//! Descriptors, localizer forward pass, training and key-frame accuracy.

use kfgnet::data::{
    generate_synthetic, GrayFrame, Label, Roi, SynthConfig, VideoSample, FEATURE_DIM,
};
use kfgnet::localizer::*;
use proptest::prelude::*;

fn blank_video(n: usize, w: usize, h: usize) -> VideoSample {
    VideoSample {
        id: "blank".into(),
        frames: vec![GrayFrame::filled(w, h, 0); n],
        rois: vec![None; n],
        features: vec![None; n],
        key_frame_index: 0,
        label: Label::Benign,
    }
}

fn small_config() -> LocalizerConfig {
    LocalizerConfig {
        feature_dim: FEATURE_DIM,
        embed_dim: 16,
        hidden_dim: 16,
        head_dim: 8,
    }
}

fn synth(videos: usize, seed: u64) -> Vec<VideoSample> {
    let cfg = SynthConfig {
        videos,
        frames: 40,
        width: 64,
        height: 64,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg, seed).unwrap()
}

#[test]
fn descriptor_examples() {
    let mut v = blank_video(2, 8, 6);
    v.rois[0] = Some(Roi::new(0, 0, 8, 6));
    v.features[0] = Some(vec![0.5; 3]);
    let d = build_descriptor(&v, 0).unwrap();
    assert_eq!(d.spatiotemporal, [0.0, 0.0, 1.0, 1.0, 0.0]);
    assert_eq!(d.appearance, vec![0.5; 3]);
    v.rois[1] = Some(Roi::new(1, 1, 2, 2));
    v.features[1] = Some(vec![0.0; 3]);
    assert_eq!(build_descriptor(&v, 1).unwrap().spatiotemporal[4], 1.0);

    let mut v = blank_video(11, 100, 200);
    v.rois[5] = Some(Roi::new(10, 20, 30, 40));
    v.features[5] = Some(vec![0.0; 4]);
    let d = build_descriptor(&v, 5).unwrap();
    let want = [0.1, 0.1, 0.3, 0.2, 0.5];
    for (g, w) in d.spatiotemporal.iter().zip(want) {
        assert!((g - w).abs() < 1e-15, "{:?}", d.spatiotemporal);
    }
    assert!(build_descriptor(&v, 4).is_err());
}

#[test]
fn zero_model_scores_one_half_on_detected_frames() {
    let video = synth(1, 1).remove(0);
    let scores = localizer_forward(&LocalizerModel::zeros(small_config()), &video).unwrap();
    assert_eq!(scores.len(), video.n_frames());
    for (i, s) in scores.values.iter().enumerate() {
        let want = if video.rois[i].is_some() { 0.5 } else { 0.0 };
        assert_eq!(*s, want);
    }
}

#[test]
fn reversing_frame_order_changes_outputs() {
    let video = synth(1, 2).remove(0);
    let model = LocalizerModel::new(small_config(), 3);
    let inputs = LocalizerInputs::from_video(&video).unwrap();
    let descriptors: Vec<NoduleDescriptor> = inputs
        .frames
        .iter()
        .map(|&i| build_descriptor(&video, i).unwrap())
        .collect();
    let mut rev = descriptors.clone();
    rev.reverse();
    let forward = model.forward(&inputs).unwrap().probs;
    let permuted =
        LocalizerInputs::from_descriptors(inputs.n_frames, inputs.frames.clone(), &rev).unwrap();
    let mut backward = model.forward(&permuted).unwrap().probs;
    backward.reverse();
    assert_ne!(forward, backward);
}

#[test]
fn argmax_examples() {
    assert_eq!(argmax_first(&[0.1, 0.9, 0.3]), Some(1));
    assert_eq!(argmax_first(&[0.5, 0.5]), Some(0));
    assert_eq!(argmax_first(&[0.1, 0.2, 0.3, 0.4]), Some(3));
}

#[test]
fn accuracy_examples() {
    assert_eq!(
        accuracy_at_tolerance(&[3, 7, 9], &[3, 7, 9], 0).unwrap(),
        1.0
    );
    assert_eq!(accuracy_at_tolerance(&[5], &[7], 1).unwrap(), 0.0);
    assert_eq!(accuracy_at_tolerance(&[10, 20], &[12, 20], 2).unwrap(), 1.0);
    assert!(accuracy_at_tolerance(&[1], &[1, 2], 0).is_err());
    assert!(accuracy_at_tolerance(&[], &[], 0).is_err());
}

#[test]
fn single_video_overfits() {
    let video = synth(1, 5).remove(0);
    let example = LocalizerExample::from_video(&video).unwrap();
    let mut model = LocalizerModel::new(small_config(), 5);
    let cfg = LocalizerTrainConfig {
        lr: 0.01,
        batch_size: 1,
        epochs: 200,
        weight_decay: 0.0,
    };
    let history = train_localizer(&mut model, std::slice::from_ref(&example), &cfg, 5).unwrap();
    let final_mse = model.loss(&example.inputs, &example.targets).unwrap();
    assert!(
        final_mse < 1e-3,
        "mse {final_mse}, curve tail {:?}",
        &history.epoch_losses[190..]
    );
    assert_eq!(history.optimizer.step_count, 200);
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let examples: Vec<LocalizerExample> = synth(12, 6)
        .iter()
        .map(|v| LocalizerExample::from_video(v).unwrap())
        .collect();
    let cfg = LocalizerTrainConfig {
        batch_size: 4,
        ..LocalizerTrainConfig::default()
    };
    let run = || {
        let mut m = LocalizerModel::new(small_config(), 9);
        let h = train_localizer(&mut m, &examples, &cfg, 9).unwrap();
        (m, h)
    };
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(h1, h2);
    assert_eq!(m1, m2);
    assert_eq!(h1.epoch_losses.len(), 20);
    assert!(
        h1.epoch_losses[19] < h1.epoch_losses[0],
        "{:?}",
        h1.epoch_losses
    );
}

#[test]
fn empty_training_set_is_rejected() {
    let mut m = LocalizerModel::new(small_config(), 1);
    assert!(train_localizer(&mut m, &[], &LocalizerTrainConfig::default(), 1).is_err());
}

#[test]
fn predictions_csv_lists_distance() {
    let rows = vec![KeyframePrediction {
        video_id: "v0".into(),
        predicted: 4,
        label: 9,
    }];
    let mut out = Vec::new();
    write_predictions_csv(&mut out, &rows).unwrap();
    assert_eq!(
        String::from_utf8(out).unwrap(),
        "video_id,predicted,label,distance\nv0,4,9,5\n"
    );
}

proptest! {
    #[test]
    fn accuracy_is_monotone_in_tolerance(pairs in prop::collection::vec((0usize..100, 0usize..100), 1..40)) {
        let (p, l): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let curve = accuracy_curve(&p, &l, 32).unwrap();
        prop_assert_eq!(curve.len(), 33);
        prop_assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
        prop_assert!(curve.iter().all(|(_, a)| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn scores_stay_in_unit_interval(seed in 0u64..1000) {
        let video = synth(1, seed).remove(0);
        let model = LocalizerModel::new(small_config(), seed);
        let s = localizer_forward(&model, &video).unwrap();
        prop_assert!(s.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let k = predict_keyframe(&model, &video).unwrap();
        prop_assert!(video.rois[k].is_some());
    }
}
