//! Brute-force references shared by the integration tests.
#![allow(dead_code)]

use kfgnet::rng;
use kfgnet::Tensor;
use rand::Rng as _;

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::stream(seed, "oracle", 0);
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// Direct nested-loop cross-correlation over `[C, D, H, W]`.
pub fn conv3d_oracle(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor {
    let s = x.shape();
    let (cin, d, h, wd) = (s[0], s[1], s[2], s[3]);
    let ws = w.shape();
    let (cout, kd, kh, kw) = (ws[0], ws[2], ws[3], ws[4]);
    let od = (d + 2 * pad[0] - kd) / stride[0] + 1;
    let oh = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let ow = (wd + 2 * pad[2] - kw) / stride[2] + 1;
    let xv = |c: usize, z: i64, y: i64, xx: i64| -> f64 {
        if z < 0 || y < 0 || xx < 0 || z >= d as i64 || y >= h as i64 || xx >= wd as i64 {
            0.0
        } else {
            x.data()[((c * d + z as usize) * h + y as usize) * wd + xx as usize]
        }
    };
    let mut out = Vec::new();
    for o in 0..cout {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..cin {
                        for a in 0..kd {
                            for bb in 0..kh {
                                for e in 0..kw {
                                    let wv =
                                        w.data()[(((o * cin + c) * kd + a) * kh + bb) * kw + e];
                                    acc += wv
                                        * xv(
                                            c,
                                            (z * stride[0] + a) as i64 - pad[0] as i64,
                                            (y * stride[1] + bb) as i64 - pad[1] as i64,
                                            (xx * stride[2] + e) as i64 - pad[2] as i64,
                                        );
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new(vec![cout, od, oh, ow], out).unwrap()
}

/// Exhaustive window maximum over `[C, D, H, W]`.
pub fn maxpool3d_oracle(x: &Tensor, window: [usize; 3], stride: [usize; 3]) -> Tensor {
    let s = x.shape();
    let (c, d, h, w) = (s[0], s[1], s[2], s[3]);
    let od = (d - window[0]) / stride[0] + 1;
    let oh = (h - window[1]) / stride[1] + 1;
    let ow = (w - window[2]) / stride[2] + 1;
    let mut out = Vec::new();
    for ch in 0..c {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut m = f64::NEG_INFINITY;
                    for a in 0..window[0] {
                        for b in 0..window[1] {
                            for e in 0..window[2] {
                                let (zi, yi, xi) =
                                    (z * stride[0] + a, y * stride[1] + b, xx * stride[2] + e);
                                m = m.max(x.data()[((ch * d + zi) * h + yi) * w + xi]);
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    Tensor::new(vec![c, od, oh, ow], out).unwrap()
}

pub fn spp_oracle(x: &Tensor) -> Vec<f64> {
    let s = x.shape();
    let (c, d, h, w) = (s[0], s[1], s[2], s[3]);
    let at = |ch: usize, z: usize, y: usize, xx: usize| x.data()[((ch * d + z) * h + y) * w + xx];
    let lo = |i: usize, e: usize| ((i * e) as f64 / 2.0).floor() as usize;
    let hi = |i: usize, e: usize| (((i + 1) * e) as f64 / 2.0).ceil() as usize;
    let mut out = x.data().to_vec();
    for ch in 0..c {
        for bz in 0..2 {
            for by in 0..2 {
                for bx in 0..2 {
                    let mut m = f64::NEG_INFINITY;
                    for z in lo(bz, d)..hi(bz, d) {
                        for y in lo(by, h)..hi(by, h) {
                            for xx in lo(bx, w)..hi(bx, w) {
                                m = m.max(at(ch, z, y, xx));
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    for ch in 0..c {
        out.push(
            x.data()[ch * d * h * w..(ch + 1) * d * h * w]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max),
        );
    }
    out
}
