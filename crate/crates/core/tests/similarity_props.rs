//! Box, frame and feature similarity plus score-label generation.

use kfgnet::data::{generate_synthetic, GrayFrame, Label, Roi, SynthConfig, VideoSample};
use kfgnet::similarity::*;
use proptest::prelude::*;

fn frame_from(seed: u64, w: usize, h: usize) -> GrayFrame {
    use rand::Rng as _;
    let mut r = kfgnet::rng::stream(seed, "frame", 0);
    GrayFrame::new(w, h, (0..w * h).map(|_| r.random()).collect()).unwrap()
}

/// Whole-frame SSIM straight from the definition, no shared moments.
fn ssim_reference(a: &GrayFrame, b: &GrayFrame) -> f64 {
    let (x, y) = (a.to_unit(), b.to_unit());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
    let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
    let cxy = x
        .iter()
        .zip(&y)
        .map(|(p, q)| (p - mx) * (q - my))
        .sum::<f64>()
        / n;
    let s = ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
    s.clamp(0.0, 1.0)
}

#[test]
fn iou_examples() {
    let a = Roi::new(0, 0, 2, 2);
    assert_eq!(iou(&a, &a), 1.0);
    assert_eq!(iou(&a, &Roi::new(2, 2, 4, 4)), 0.0);
    assert!((iou(&a, &Roi::new(1, 1, 3, 3)) - 1.0 / 7.0).abs() < 1e-15);
}

#[test]
fn feature_similarity_examples() {
    let f = |d: f64| Some(vec![d, 0.0]);
    assert_eq!(
        feature_similarity(&[f(0.0), f(1.0), f(2.0)], 0).unwrap(),
        vec![1.0, 0.5, 0.0]
    );
    assert_eq!(
        feature_similarity(&[f(3.0), f(3.0), f(3.0)], 1).unwrap(),
        vec![1.0; 3]
    );
    assert_eq!(
        feature_similarity(&[f(0.0), None, f(2.0)], 0).unwrap(),
        vec![1.0, 0.0, 0.0]
    );
}

#[test]
fn index_similarity_examples() {
    let s = index_similarity(101, 50);
    assert_eq!(s[25], 0.5);
    assert_eq!(s[50], 1.0);
    assert_eq!(s[0], 0.0);
    assert_eq!(s[100], 0.0);
}

#[test]
fn score_label_of_identical_neighbour_is_two_thirds() {
    let roi = Some(Roi::new(1, 1, 5, 5));
    let video = VideoSample {
        id: "tiny".into(),
        frames: vec![GrayFrame::filled(8, 8, 10); 3],
        rois: vec![roi; 3],
        features: vec![
            Some(vec![1.0, 1.0]),
            Some(vec![1.0, 1.0]),
            Some(vec![0.0, 0.0]),
        ],
        key_frame_index: 1,
        label: Label::Benign,
    };
    let labels = generate_score_labels(&video).unwrap();
    assert_eq!(labels.values[1], 1.0);
    assert!((labels.values[0] - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn ssim_of_black_and_white_constants() {
    let a = GrayFrame::filled(16, 16, 0);
    let b = GrayFrame::filled(16, 16, 255);
    let want = SSIM_C1 / (1.0 + SSIM_C1);
    assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-15);
    assert!((want - 9.999e-5).abs() < 1e-7);
}

#[test]
fn hist_similarity_examples() {
    let a = GrayFrame::new(2, 1, vec![0, 100]).unwrap();
    let b = GrayFrame::new(2, 1, vec![0, 200]).unwrap();
    assert_eq!(hist_similarity(&a, &b).unwrap(), 0.5);
    assert_eq!(hist_similarity(&a, &a).unwrap(), 1.0);
    assert_eq!(
        hist_similarity(&GrayFrame::filled(2, 1, 3), &GrayFrame::filled(2, 1, 4)).unwrap(),
        0.0
    );
}

#[test]
fn static_video_has_unit_motion_index() {
    let f = frame_from(1, 12, 10);
    assert!(motion_index(&vec![f; 6])
        .unwrap()
        .iter()
        .all(|&m| (m - 1.0).abs() < 1e-12));
}

#[test]
fn three_frame_motion_index_by_hand() {
    // constant frames 0, 51, 51: ssim reduces to (2ab + C1) / (a^2 + b^2 + C1)
    let frames = vec![
        GrayFrame::filled(4, 4, 0),
        GrayFrame::filled(4, 4, 51),
        GrayFrame::filled(4, 4, 51),
    ];
    let b = 0.2;
    let differ = (SSIM_C1 / (b * b + SSIM_C1) + 0.0) / 2.0;
    let m = motion_index(&frames).unwrap();
    let want = [differ, (differ + 1.0) / 2.0, (differ + 1.0) / 2.0];
    for (g, w) in m.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{m:?} vs {want:?}");
    }
}

#[test]
fn first_frame_uses_forward_neighbours_only() {
    let frames: Vec<GrayFrame> = (0..5).map(|i| frame_from(10 + i, 8, 8)).collect();
    let pair = |i: usize, j: usize| {
        (ssim(&frames[i], &frames[j]).unwrap() + hist_similarity(&frames[i], &frames[j]).unwrap())
            / 2.0
    };
    let m = motion_index(&frames).unwrap();
    assert!((m[0] - (pair(0, 1) + pair(0, 2)) / 2.0).abs() < 1e-12);
    assert!((m[2] - (pair(2, 0) + pair(2, 1) + pair(2, 3) + pair(2, 4)) / 4.0).abs() < 1e-12);
}

#[test]
fn motion_vector_examples() {
    assert_eq!(
        motion_vector(&[1.0, 1.0, 0.0, 0.0], 2).unwrap(),
        vec![1.0, 0.0]
    );
    assert_eq!(motion_vector(&[0.3; 32], 8).unwrap(), vec![0.3; 8]);
    for w in 0..8 {
        assert_eq!(window_bounds(32, 8, w), (4 * w, 4 * w + 4));
    }
    assert!(motion_vector(&[1.0], 2).is_err());
}

#[test]
fn generated_labels_peak_at_the_key_frame() {
    let cfg = SynthConfig {
        videos: 12,
        frames: 48,
        width: 64,
        height: 64,
        ..SynthConfig::default()
    };
    for v in generate_synthetic(&cfg, 4).unwrap() {
        let s = generate_score_labels(&v).unwrap();
        assert_eq!(s.len(), v.n_frames());
        assert_eq!(s.values[v.key_frame_index], 1.0);
        assert!(s.values.iter().all(|x| (0.0..=1.0).contains(x)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ssim_is_reflexive_symmetric_and_bounded(sa in any::<u64>(), sb in any::<u64>(), w in 2usize..20, h in 2usize..20) {
        let (a, b) = (frame_from(sa, w, h), frame_from(sb, w, h));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim(&a, &b).unwrap();
        prop_assert_eq!(ab, ssim(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ssim_reference(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn hist_similarity_is_symmetric_and_bounded(sa in any::<u64>(), sb in any::<u64>()) {
        let (a, b) = (frame_from(sa, 9, 7), frame_from(sb, 9, 7));
        let ab = hist_similarity(&a, &b).unwrap();
        prop_assert_eq!(ab, hist_similarity(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in (0u32..20, 0u32..20, 1u32..10, 1u32..10), b in (0u32..20, 0u32..20, 1u32..10, 1u32..10)) {
        let ra = Roi::new(a.0, a.1, a.0 + a.2, a.1 + a.3);
        let rb = Roi::new(b.0, b.1, b.0 + b.2, b.1 + b.3);
        let v = iou(&ra, &rb);
        prop_assert_eq!(v, iou(&rb, &ra));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(iou(&ra, &ra), 1.0);
    }

    #[test]
    fn motion_vector_has_requested_length_and_range(values in prop::collection::vec(0.0f64..=1.0, 8..64), windows in 1usize..8) {
        let v = motion_vector(&values, windows).unwrap();
        prop_assert_eq!(v.len(), windows);
        prop_assert!(v.iter().all(|x| (0.0..=1.0 + 1e-12).contains(x)));
    }

    #[test]
    fn index_similarity_is_unit_at_key_and_bounded(n in 1usize..200, k_frac in 0.0f64..1.0) {
        let k = ((n as f64 * k_frac) as usize).min(n - 1);
        let s = index_similarity(n, k);
        prop_assert_eq!(s[k], 1.0);
        prop_assert!(s.iter().all(|x| (0.0..=1.0).contains(x)));
    }
}
