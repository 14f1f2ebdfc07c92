//! Kernels against brute-force oracles and central finite differences.

use kfgnet::kernels::activation::sigmoid_scalar;
use kfgnet::kernels::*;
use kfgnet::rng;
use kfgnet::Tensor;
use rand::Rng as _;

mod common;
use common::{conv3d_oracle, maxpool3d_oracle, random, spp_oracle};

#[test]
fn conv3d_matches_direct_summation() {
    let spec = ConvSpec::new3d(2, 3, [3, 3, 3], [1, 1, 1], [1, 1, 1]);
    let x = random(&[2, 4, 5, 5], 1);
    let w = random(&spec.weight_shape3d(), 2);
    let b = random(&[3], 3);
    let got = conv3d(&x, &spec, &w, &b).unwrap();
    let want = conv3d_oracle(&x, &w, &b, [1, 1, 1], [1, 1, 1]);
    assert_eq!(got.shape(), want.shape());
    assert!(got.max_abs_diff(&want) < 1e-12);
}

#[test]
fn conv3d_randomised_geometry_up_to_3x3x6x6x6() {
    let mut r = rng::stream(11, "geometry", 0);
    for seed in 0..40u64 {
        let cin = r.random_range(1..=3);
        let cout = r.random_range(1..=3);
        let ext = [
            r.random_range(3..=6),
            r.random_range(3..=6),
            r.random_range(3..=6),
        ];
        let k = [
            r.random_range(1..=3),
            r.random_range(1..=3),
            r.random_range(1..=3),
        ];
        let stride = [
            r.random_range(1..=2),
            r.random_range(1..=2),
            r.random_range(1..=2),
        ];
        let pad = [
            r.random_range(0..=1),
            r.random_range(0..=1),
            r.random_range(0..=1),
        ];
        let spec = ConvSpec::new3d(cin, cout, k, stride, pad);
        let x = random(&[cin, ext[0], ext[1], ext[2]], 100 + seed);
        let w = random(&spec.weight_shape3d(), 200 + seed);
        let b = random(&[cout], 300 + seed);
        let got = conv3d(&x, &spec, &w, &b).unwrap();
        let want = conv3d_oracle(&x, &w, &b, stride, pad);
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want) < 1e-12, "seed {seed}");
    }
}

#[test]
fn conv2d_matches_direct_summation() {
    let spec = ConvSpec::new2d(3, 2, [3, 3], [2, 2], [0, 0]);
    let x = random(&[3, 14, 14], 4);
    let w = random(&spec.weight_shape2d(), 5);
    let b = random(&[2], 6);
    let got = conv2d(&x, &spec, &w, &b).unwrap();
    assert_eq!(got.shape(), &[2, 6, 6]);
    let x3 = x.clone().reshape(&[3, 1, 14, 14]).unwrap();
    let w3 = w.clone().reshape(&[2, 3, 1, 3, 3]).unwrap();
    let want = conv3d_oracle(&x3, &w3, &b, [1, 2, 2], [0, 0, 0]);
    assert!(got
        .data()
        .iter()
        .zip(want.data())
        .all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn batched_conv_equals_per_sample_conv() {
    let spec = ConvSpec::new3d(2, 3, [3, 3, 3], [2, 1, 2], [1, 0, 1]);
    let x = random(&[3, 2, 5, 5, 6], 7);
    let w = random(&spec.weight_shape3d(), 8);
    let b = random(&[3], 9);
    let y = conv3d(&x, &spec, &w, &b).unwrap();
    let per = 2 * 5 * 5 * 6;
    for n in 0..3 {
        let xs = Tensor::new(vec![2, 5, 5, 6], x.data()[n * per..(n + 1) * per].to_vec()).unwrap();
        let ys = conv3d(&xs, &spec, &w, &b).unwrap();
        let len = ys.len();
        assert_eq!(&y.data()[n * len..(n + 1) * len], ys.data());
    }
}
#[test]
fn maxpool_matches_exhaustive_window_max() {
    let x = random(&[1, 4, 4, 4], 12);
    let got = maxpool3d(&x, [2, 2, 2], [2, 2, 2]).unwrap();
    assert_eq!(
        got.data(),
        maxpool3d_oracle(&x, [2, 2, 2], [2, 2, 2]).data()
    );
    let mut r = rng::stream(19, "pool", 0);
    for seed in 0..20 {
        let shape = [
            r.random_range(1..=3),
            r.random_range(2..=6),
            r.random_range(2..=6),
            r.random_range(2..=6),
        ];
        let x = random(&shape, 500 + seed);
        let got = maxpool3d(&x, [2, 2, 2], [2, 2, 2]).unwrap();
        let want = maxpool3d_oracle(&x, [2, 2, 2], [2, 2, 2]);
        assert_eq!(got.shape(), want.shape());
        assert_eq!(got.data(), want.data());
    }
}

#[test]
fn spp_matches_per_bin_oracle() {
    let x = random(&[2, 2, 3, 3], 13);
    let got = spp3d(&x).unwrap();
    assert_eq!(got.len(), 2 * 27);
    assert_eq!(got.data(), &spp_oracle(&x)[..]);
    let mut r = rng::stream(17, "spp", 0);
    for seed in 0..20 {
        let shape = [
            r.random_range(1..=3),
            r.random_range(2..=6),
            r.random_range(2..=6),
            r.random_range(2..=6),
        ];
        let x = random(&shape, 400 + seed);
        let got = spp3d(&x).unwrap();
        assert_eq!(got.len(), shape[0] * (shape[1] * shape[2] * shape[3] + 9));
        assert_eq!(got.data(), &spp_oracle(&x)[..]);
    }
}

#[test]
fn fully_connected_matches_dot_products() {
    let x = random(&[7], 14);
    let w = random(&[4, 7], 15);
    let b = random(&[4], 16);
    let y = fully_connected(&x, &w, &b).unwrap();
    for o in 0..4 {
        let dot: f64 = (0..7)
            .map(|i| w.data()[o * 7 + i] * x.data()[i])
            .sum::<f64>()
            + b.data()[o];
        assert!((y.data()[o] - dot).abs() < 1e-12);
    }
}

#[test]
fn mse_matches_elementwise_oracle() {
    let p = random(&[9], 18);
    let t = random(&[9], 19);
    let mut acc = 0.0;
    for i in 0..9 {
        acc += (p.data()[i] - t.data()[i]).powi(2);
    }
    assert!((mse_loss(p.data(), t.data()).unwrap() - acc / 9.0).abs() < 1e-15);
}

#[test]
fn single_step_lstm_equals_cell_oracle() {
    let (inp, hid) = (5, 3);
    let p = LstmParams {
        w_ih: random(&[4 * hid, inp], 20),
        w_hh: random(&[4 * hid, hid], 21),
        bias: random(&[4 * hid], 22),
    };
    let x = random(&[1, inp], 23);
    let h0 = random(&[hid], 24);
    let c0 = random(&[hid], 25);
    let (h, _) = lstm_sequence(&x, &p, &h0, &c0).unwrap();
    for j in 0..hid {
        let pre = |gate: usize| {
            let row = gate * hid + j;
            let mut s = p.bias.data()[row];
            for k in 0..inp {
                s += p.w_ih.data()[row * inp + k] * x.data()[k];
            }
            for k in 0..hid {
                s += p.w_hh.data()[row * hid + k] * h0.data()[k];
            }
            s
        };
        let i = 1.0 / (1.0 + (-pre(0)).exp());
        let f = 1.0 / (1.0 + (-pre(1)).exp());
        let g = pre(2).tanh();
        let o = 1.0 / (1.0 + (-pre(3)).exp());
        let c = f * c0.data()[j] + i * g;
        assert!((h.data()[j] - o * c.tanh()).abs() < 1e-14);
    }
}

// ---- finite-difference checks ---------------------------------------------

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Scalar projection `sum(r * out)` so a tensor-valued kernel can be checked.
fn project(out: &Tensor, r: &Tensor) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn gradcheck_fully_connected() {
    for seed in SEEDS {
        let x = random(&[2, 6], seed);
        let w = random(&[4, 6], seed + 10);
        let b = random(&[4], seed + 20);
        let r = random(&[2, 4], seed + 30);
        let g = fully_connected_backward(&x, &w, &r).unwrap();
        let rep = grad_check(
            |t| Ok(project(&fully_connected(&t[0], &t[1], &t[2])?, &r)),
            &[x, w, b],
            &[
                g.d_input.clone(),
                g.param("weight").clone(),
                g.param("bias").clone(),
            ],
            H,
            1e-6,
        )
        .unwrap();
        assert!(rep.passed(), "{rep:?}");
    }
}

#[test]
fn gradcheck_relu_away_from_zero() {
    for seed in SEEDS {
        let x = random(&[20], seed).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        let r = random(&[20], seed + 1);
        let g = relu_backward(&x, &r).unwrap();
        let rep = grad_check(|t| Ok(project(&relu(&t[0]), &r)), &[x], &[g], H, 1e-6).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }
}

#[test]
fn gradcheck_conv3d_and_conv2d() {
    for seed in SEEDS {
        let spec = ConvSpec::new3d(2, 3, [3, 3, 3], [1, 2, 2], [1, 1, 1]);
        let x = random(&[2, 2, 4, 5, 5], seed);
        let w = random(&spec.weight_shape3d(), seed + 1);
        let b = random(&[3], seed + 2);
        let y = conv3d(&x, &spec, &w, &b).unwrap();
        let r = random(y.shape(), seed + 3);
        let g = conv3d_backward(&x, &spec, &w, &r).unwrap();
        let rep = grad_check(
            |t| Ok(project(&conv3d(&t[0], &spec, &t[1], &t[2])?, &r)),
            &[x, w, b],
            &[
                g.d_input.clone(),
                g.param("weight").clone(),
                g.param("bias").clone(),
            ],
            H,
            1e-5,
        )
        .unwrap();
        assert!(rep.passed(), "conv3d {rep:?}");

        let spec = ConvSpec::new2d(2, 2, [3, 3], [2, 2], [0, 0]);
        let x = random(&[2, 7, 7], seed + 4);
        let w = random(&spec.weight_shape2d(), seed + 5);
        let b = random(&[2], seed + 6);
        let y = conv2d(&x, &spec, &w, &b).unwrap();
        let r = random(y.shape(), seed + 7);
        let g = conv2d_backward(&x, &spec, &w, &r).unwrap();
        let rep = grad_check(
            |t| Ok(project(&conv2d(&t[0], &spec, &t[1], &t[2])?, &r)),
            &[x, w, b],
            &[
                g.d_input.clone(),
                g.param("weight").clone(),
                g.param("bias").clone(),
            ],
            H,
            TOL,
        )
        .unwrap();
        assert!(rep.passed(), "conv2d {rep:?}");
    }
}

#[test]
fn gradcheck_batchnorm_train_and_eval() {
    for seed in SEEDS {
        let x = random(&[2, 3, 2, 3, 3], seed);
        let mut p = BatchNormParams::new(3);
        p.gamma = random(&[3], seed + 1).map(|v| v + 1.5);
        p.beta = random(&[3], seed + 2);
        p.running_mean = random(&[3], seed + 3);
        p.running_var = random(&[3], seed + 4).map(|v| v + 1.5);
        let r = random(x.shape(), seed + 5);
        for mode in [Mode::Train, Mode::Eval] {
            let (_, cache) = batchnorm3d(&x, &p, mode).unwrap();
            let g = batchnorm3d_backward(&cache, &p.gamma, &r).unwrap();
            let base = p.clone();
            let rep = grad_check(
                |t| {
                    let mut q = base.clone();
                    q.gamma = t[1].clone();
                    q.beta = t[2].clone();
                    Ok(project(&batchnorm3d(&t[0], &q, mode)?.0, &r))
                },
                &[x.clone(), p.gamma.clone(), p.beta.clone()],
                &[
                    g.d_input.clone(),
                    g.param("gamma").clone(),
                    g.param("beta").clone(),
                ],
                H,
                TOL,
            )
            .unwrap();
            assert!(rep.passed(), "{mode:?} {rep:?}");
        }
    }
}

#[test]
fn gradcheck_maxpool_and_spp() {
    for seed in SEEDS {
        let x = random(&[2, 4, 5, 6], seed);
        let y = maxpool3d(&x, [2, 2, 2], [2, 2, 2]).unwrap();
        let r = random(y.shape(), seed + 1);
        let g = maxpool3d_backward(&x, [2, 2, 2], [2, 2, 2], &r).unwrap();
        let rep = grad_check(
            |t| Ok(project(&maxpool3d(&t[0], [2, 2, 2], [2, 2, 2])?, &r)),
            &[x],
            &[g],
            H,
            TOL,
        )
        .unwrap();
        assert!(rep.passed(), "maxpool {rep:?}");

        let x = random(&[2, 2, 3, 3], seed + 2);
        let r = random(&[54], seed + 3);
        let g = spp3d_backward(&x, &r).unwrap();
        let rep = grad_check(|t| Ok(project(&spp3d(&t[0])?, &r)), &[x], &[g], H, TOL).unwrap();
        assert!(rep.passed(), "spp {rep:?}");
    }
}

#[test]
fn gradcheck_lstm_through_time() {
    for seed in SEEDS {
        let (inp, hid, steps) = (4, 3, 5);
        let x = random(&[steps, inp], seed);
        let p = LstmParams {
            w_ih: random(&[4 * hid, inp], seed + 1),
            w_hh: random(&[4 * hid, hid], seed + 2),
            bias: random(&[4 * hid], seed + 3),
        };
        let h0 = random(&[hid], seed + 4);
        let c0 = random(&[hid], seed + 5);
        let r = random(&[steps, hid], seed + 6);
        let (hs, cache) = lstm_sequence(&x, &p, &h0, &c0).unwrap();
        let g = lstm_sequence_backward(&x, &p, &hs, &cache, &r).unwrap();
        let rep = grad_check(
            |t| {
                let q = LstmParams {
                    w_ih: t[1].clone(),
                    w_hh: t[2].clone(),
                    bias: t[3].clone(),
                };
                Ok(project(&lstm_sequence(&t[0], &q, &t[4], &t[5])?.0, &r))
            },
            &[x, p.w_ih.clone(), p.w_hh.clone(), p.bias.clone(), h0, c0],
            &[g.d_inputs, g.d_w_ih, g.d_w_hh, g.d_bias, g.d_h0, g.d_c0],
            H,
            TOL,
        )
        .unwrap();
        assert!(rep.passed(), "{rep:?}");
    }
}

#[test]
fn gradcheck_losses() {
    for seed in SEEDS {
        // bce through the sigmoid
        let logits = random(&[6], seed).map(|v| 3.0 * v);
        let labels: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
        let probs: Vec<f64> = logits.data().iter().map(|&v| sigmoid_scalar(v)).collect();
        let g = Tensor::vector(bce_loss_backward_logits(&probs, &labels).unwrap());
        let rep = grad_check(
            |t| {
                let p: Vec<f64> = t[0].data().iter().map(|&v| sigmoid_scalar(v)).collect();
                bce_loss(&p, &labels)
            },
            &[logits],
            &[g],
            H,
            TOL,
        )
        .unwrap();
        assert!(rep.passed(), "bce {rep:?}");

        let pred = random(&[8], seed + 1);
        let target = random(&[8], seed + 2);
        let g = Tensor::vector(mse_loss_backward(pred.data(), target.data()).unwrap());
        let rep = grad_check(
            |t| mse_loss(t[0].data(), target.data()),
            &[pred],
            &[g],
            H,
            TOL,
        )
        .unwrap();
        assert!(rep.passed(), "mse {rep:?}");

        let vt = random(&[8], seed + 3).map(|v| v + 1.2);
        let vm = random(&[8], seed + 4).map(|v| 0.5 + 0.4 * v);
        let g = Tensor::vector(cosine_consistency_loss_backward(vt.data(), vm.data()).unwrap());
        let rep = grad_check(
            |t| cosine_consistency_loss(t[0].data(), vm.data()),
            &[vt],
            &[g],
            H,
            TOL,
        )
        .unwrap();
        assert!(rep.passed(), "cosine {rep:?}");
    }
}

#[test]
fn dropout_mask_gradient_matches() {
    let x = random(&[50], 3);
    let mut r1 = rng::stream(9, rng::DROPOUT, 0);
    let (_, mask) = dropout(&x, 0.5, Mode::Train, &mut r1).unwrap();
    let up = random(&[50], 4);
    let g = dropout_backward(&mask, &up).unwrap();
    let rep = grad_check(
        |t| {
            let mut r = rng::stream(9, rng::DROPOUT, 0);
            Ok(project(&dropout(&t[0], 0.5, Mode::Train, &mut r)?.0, &up))
        },
        &[x],
        &[g],
        H,
        TOL,
    )
    .unwrap();
    assert!(rep.passed(), "{rep:?}");
}
