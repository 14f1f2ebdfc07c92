//! Max pooling and three-level 3-D spatial pyramid pooling.
//!
//! Ties inside a window resolve to the first maximiser in row-major order,
//! which is also where the backward pass routes the gradient.

use crate::error::{config_err, shape_err, Result};
use crate::tensor::Tensor;

/// Splits a rank-4 `[C, D, H, W]` or rank-5 `[N, C, D, H, W]` shape.
fn split_shape(x: &Tensor, what: &str) -> Result<(usize, bool, usize, [usize; 3])> {
    match *x.shape() {
        [c, d, h, w] => Ok((1, false, c, [d, h, w])),
        [n, c, d, h, w] => Ok((n, true, c, [d, h, w])),
        _ => shape_err(format!(
            "{what} expects [C,D,H,W] or [N,C,D,H,W], got {:?}",
            x.shape()
        )),
    }
}

fn pool_output(input: [usize; 3], window: [usize; 3], stride: [usize; 3]) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        if window[a] == 0 || stride[a] == 0 {
            return config_err("max pool window and stride must be positive");
        }
        if window[a] > input[a] {
            return config_err(format!(
                "max pool window {window:?} larger than input {input:?}"
            ));
        }
        out[a] = (input[a] - window[a]) / stride[a] + 1;
    }
    Ok(out)
}

/// For each output cell, the flat index (within its channel plane) of the window argmax.
fn pool_argmax(
    x: &[f64],
    input: [usize; 3],
    out: [usize; 3],
    window: [usize; 3],
    stride: [usize; 3],
) -> Vec<usize> {
    let [_, ih, iw] = input;
    let mut idx = Vec::with_capacity(out.iter().product());
    for z in 0..out[0] {
        for y in 0..out[1] {
            for xo in 0..out[2] {
                let (z0, y0, x0) = (z * stride[0], y * stride[1], xo * stride[2]);
                let mut best = (z0 * ih + y0) * iw + x0;
                let mut best_v = x[best];
                for a in 0..window[0] {
                    for b in 0..window[1] {
                        for e in 0..window[2] {
                            let i = ((z0 + a) * ih + y0 + b) * iw + x0 + e;
                            if x[i] > best_v {
                                best_v = x[i];
                                best = i;
                            }
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

fn pooled_shape(batched: bool, n: usize, c: usize, out: [usize; 3]) -> Vec<usize> {
    let mut s = if batched { vec![n, c] } else { vec![c] };
    s.extend_from_slice(&out);
    s
}

/// Max pooling over `[C, D, H, W]` (or batched) with floor semantics; trailing remainders are dropped.
pub fn maxpool3d(x: &Tensor, window: [usize; 3], stride: [usize; 3]) -> Result<Tensor> {
    let (n, batched, c, input) = split_shape(x, "maxpool3d")?;
    let out = pool_output(input, window, stride)?;
    let plane_in: usize = input.iter().product();
    let mut data = Vec::with_capacity(n * c * out.iter().product::<usize>());
    for plane in x.data().chunks(plane_in) {
        let idx = pool_argmax(plane, input, out, window, stride);
        data.extend(idx.iter().map(|&i| plane[i]));
    }
    Tensor::new(pooled_shape(batched, n, c, out), data)
}

/// Routes `d_out` to the argmax of each window.
pub fn maxpool3d_backward(
    x: &Tensor,
    window: [usize; 3],
    stride: [usize; 3],
    d_out: &Tensor,
) -> Result<Tensor> {
    let (n, batched, c, input) = split_shape(x, "maxpool3d")?;
    let out = pool_output(input, window, stride)?;
    d_out.expect_shape(
        &pooled_shape(batched, n, c, out),
        "maxpool3d upstream gradient",
    )?;
    let plane_in: usize = input.iter().product();
    let plane_out: usize = out.iter().product();
    let mut dx = vec![0.0; x.len()];
    for (p, (plane, dplane)) in x
        .data()
        .chunks(plane_in)
        .zip(dx.chunks_mut(plane_in))
        .enumerate()
    {
        let idx = pool_argmax(plane, input, out, window, stride);
        let g = &d_out.data()[p * plane_out..(p + 1) * plane_out];
        for (&i, &gv) in idx.iter().zip(g) {
            dplane[i] += gv;
        }
    }
    Tensor::new(x.shape().to_vec(), dx)
}

/// Window argmax (flat index within each channel plane) for every output cell, plane by plane.
pub fn maxpool3d_argmax(x: &Tensor, window: [usize; 3], stride: [usize; 3]) -> Result<Vec<usize>> {
    let (_, _, _, input) = split_shape(x, "maxpool3d")?;
    let out = pool_output(input, window, stride)?;
    let plane_in: usize = input.iter().product();
    Ok(x.data()
        .chunks(plane_in)
        .flat_map(|plane| pool_argmax(plane, input, out, window, stride))
        .collect())
}

/// Length of the pyramid descriptor for a `[C, D, H, W]` map: `C * (D*H*W + 8 + 1)`.
pub fn spp_output_len(channels: usize, extent: [usize; 3]) -> usize {
    channels * (extent.iter().product::<usize>() + 8 + 1)
}

/// Adaptive bin `i` of 2 over an axis of length `e`: `[floor(i*e/2), ceil((i+1)*e/2))`.
fn bin(i: usize, e: usize) -> (usize, usize) {
    (i * e / 2, ((i + 1) * e).div_ceil(2))
}

/// Flat indices (within a channel plane) of each pyramid output's source element,
/// in output order: the plane itself, the 2x2x2 adaptive bins, then the global max.
fn spp_sources(plane: &[f64], e: [usize; 3]) -> Vec<usize> {
    let [d, h, w] = e;
    let mut src: Vec<usize> = (0..plane.len()).collect();
    let argmax_in = |z: (usize, usize), y: (usize, usize), x: (usize, usize)| {
        let mut best = (z.0 * h + y.0) * w + x.0;
        for zi in z.0..z.1 {
            for yi in y.0..y.1 {
                for xi in x.0..x.1 {
                    let i = (zi * h + yi) * w + xi;
                    if plane[i] > plane[best] {
                        best = i;
                    }
                }
            }
        }
        best
    };
    for bz in 0..2 {
        for by in 0..2 {
            for bx in 0..2 {
                src.push(argmax_in(bin(bz, d), bin(by, h), bin(bx, w)));
            }
        }
    }
    src.push(argmax_in((0, d), (0, h), (0, w)));
    src
}

fn spp_plan(x: &Tensor) -> Result<(usize, bool, usize, [usize; 3])> {
    let (n, batched, c, e) = split_shape(x, "spp3d")?;
    if e.iter().any(|&v| v < 2) {
        return config_err(format!("spp3d needs every extent >= 2, got {e:?}"));
    }
    Ok((n, batched, c, e))
}

/// Three-level pyramid: flattened map, adaptive 2x2x2 max, global max.
///
/// Output is `[C*(D*H*W+9)]`, or `[N, C*(D*H*W+9)]` for batched input. The three
/// levels are laid out level-major: all channels of level one, then level two, then three.
pub fn spp3d(x: &Tensor) -> Result<Tensor> {
    let (n, batched, c, e) = spp_plan(x)?;
    let vol: usize = e.iter().product();
    let len = spp_output_len(c, e);
    let mut out = vec![0.0; n * len];
    for s in 0..n {
        let o = &mut out[s * len..(s + 1) * len];
        for ch in 0..c {
            let plane = &x.data()[(s * c + ch) * vol..(s * c + ch + 1) * vol];
            let src = spp_sources(plane, e);
            o[ch * vol..(ch + 1) * vol].copy_from_slice(plane);
            for b in 0..8 {
                o[c * vol + ch * 8 + b] = plane[src[vol + b]];
            }
            o[c * vol + c * 8 + ch] = plane[src[vol + 8]];
        }
    }
    let shape = if batched { vec![n, len] } else { vec![len] };
    Tensor::new(shape, out)
}

/// Source element of every adaptive-bin and global maximum, plane by plane.
pub fn spp3d_argmax(x: &Tensor) -> Result<Vec<usize>> {
    let (_, _, _, e) = spp_plan(x)?;
    let vol: usize = e.iter().product();
    Ok(x.data()
        .chunks(vol)
        .flat_map(|plane| spp_sources(plane, e).split_off(vol))
        .collect())
}

pub fn spp3d_backward(x: &Tensor, d_out: &Tensor) -> Result<Tensor> {
    let (n, batched, c, e) = spp_plan(x)?;
    let vol: usize = e.iter().product();
    let len = spp_output_len(c, e);
    let shape = if batched { vec![n, len] } else { vec![len] };
    d_out.expect_shape(&shape, "spp3d upstream gradient")?;
    let mut dx = vec![0.0; x.len()];
    for s in 0..n {
        let g = &d_out.data()[s * len..(s + 1) * len];
        for ch in 0..c {
            let base = (s * c + ch) * vol;
            let plane = &x.data()[base..base + vol];
            let src = spp_sources(plane, e);
            let dp = &mut dx[base..base + vol];
            for (d, gv) in dp.iter_mut().zip(&g[ch * vol..(ch + 1) * vol]) {
                *d += gv;
            }
            for b in 0..8 {
                dp[src[vol + b]] += g[c * vol + ch * 8 + b];
            }
            dp[src[vol + 8]] += g[c * vol + c * 8 + ch];
        }
    }
    Tensor::new(x.shape().to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_pools_to_constant() {
        let x = Tensor::filled(&[2, 4, 4, 4], 0.7);
        let y = maxpool3d(&x, [2, 2, 2], [2, 2, 2]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
        let s = spp3d(&x).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn pool_shape_uses_floor() {
        let x = Tensor::zeros(&[1, 8, 14, 14]);
        let y = maxpool3d(&x, [2, 2, 2], [2, 2, 2]).unwrap();
        assert_eq!(y.shape(), &[1, 4, 7, 7]);
        let x = Tensor::zeros(&[64, 4, 7, 7]);
        assert_eq!(
            maxpool3d(&x, [2, 2, 2], [2, 2, 2]).unwrap().shape(),
            &[64, 2, 3, 3]
        );
    }

    #[test]
    fn window_larger_than_input_is_rejected() {
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        assert!(maxpool3d(&x, [2, 2, 2], [2, 2, 2]).is_err());
    }

    #[test]
    fn ties_route_to_first_maximiser() {
        let x = Tensor::filled(&[1, 2, 2, 2], 1.0);
        let g = maxpool3d_backward(
            &x,
            [2, 2, 2],
            [2, 2, 2],
            &Tensor::filled(&[1, 1, 1, 1], 3.0),
        )
        .unwrap();
        assert_eq!(g.data(), &[3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn spp_length_and_bins() {
        assert_eq!(spp_output_len(64, [2, 3, 3]), 1728);
        let x = Tensor::zeros(&[3, 2, 3, 3]);
        assert_eq!(spp3d(&x).unwrap().len(), 27 * 3);
        assert_eq!(bin(0, 3), (0, 2));
        assert_eq!(bin(1, 3), (1, 3));
        assert_eq!(bin(0, 2), (0, 1));
        assert!(spp3d(&Tensor::zeros(&[1, 1, 3, 3])).is_err());
    }
}
