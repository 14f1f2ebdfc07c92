//! 2-D and 3-D cross-correlation with zero padding.
//!
//! Both ranks share one implementation: a 2-D convolution is a 3-D one with a
//! unit depth axis. The forward pass lowers each sample to an im2col matrix
//! and multiplies it against the `[out, in*k]` weight matrix.

use std::collections::BTreeMap;

use super::LayerGrads;
use crate::error::{config_err, shape_err, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Geometry of a convolution layer. Axes are ordered (depth, height, width);
/// 2-D specs carry a unit depth kernel with no padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn new3d(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Self {
        ConvSpec {
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
        }
    }

    pub fn new2d(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
    ) -> Self {
        ConvSpec {
            kernel: [1, kernel[0], kernel[1]],
            stride: [1, stride[0], stride[1]],
            padding: [0, padding[0], padding[1]],
            in_channels,
            out_channels,
        }
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Shape of the weight tensor for a 3-D layer: `[out, in, kd, kh, kw]`.
    pub fn weight_shape3d(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels,
            self.kernel[0],
            self.kernel[1],
            self.kernel[2],
        ]
    }

    /// Shape of the weight tensor for a 2-D layer: `[out, in, kh, kw]`.
    pub fn weight_shape2d(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels,
            self.kernel[1],
            self.kernel[2],
        ]
    }

    /// `floor((in + 2*pad - kernel) / stride) + 1` per axis; errors when any axis would be empty.
    pub fn output_extent(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for axis in 0..3 {
            if self.stride[axis] == 0 || self.kernel[axis] == 0 {
                return config_err(format!("zero kernel/stride in {self:?}"));
            }
            let padded = input[axis] + 2 * self.padding[axis];
            if padded < self.kernel[axis] {
                return config_err(format!(
                    "kernel {:?} does not fit input {:?} with padding {:?}",
                    self.kernel, input, self.padding
                ));
            }
            out[axis] = (padded - self.kernel[axis]) / self.stride[axis] + 1;
        }
        Ok(out)
    }
}

/// Resolved geometry for one call.
struct Plan {
    batch: usize,
    batched: bool,
    input: [usize; 3],
    output: [usize; 3],
    spec: ConvSpec,
}

impl Plan {
    fn in_len(&self) -> usize {
        self.spec.in_channels * self.input.iter().product::<usize>()
    }
    fn in_channel_len(&self) -> usize {
        self.input.iter().product()
    }
    fn out_pixels(&self) -> usize {
        self.output.iter().product()
    }
    fn col_rows(&self) -> usize {
        self.spec.in_channels * self.spec.kernel_volume()
    }
}

fn plan(
    x: &Tensor,
    spec: &ConvSpec,
    spatial_rank: usize,
    weight: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Plan> {
    let shape = x.shape();
    let (batch, batched, rest) = if shape.len() == spatial_rank + 2 {
        (shape[0], true, &shape[1..])
    } else if shape.len() == spatial_rank + 1 {
        (1, false, shape)
    } else {
        return shape_err(format!(
            "conv{spatial_rank}d input must have rank {} or {}, got {shape:?}",
            spatial_rank + 1,
            spatial_rank + 2
        ));
    };
    if rest[0] != spec.in_channels {
        return shape_err(format!(
            "conv input has {} channels, spec expects {}",
            rest[0], spec.in_channels
        ));
    }
    let input = if spatial_rank == 3 {
        [rest[1], rest[2], rest[3]]
    } else {
        if spec.kernel[0] != 1 || spec.stride[0] != 1 || spec.padding[0] != 0 {
            return config_err("2-D convolution with a non-trivial depth axis");
        }
        [1, rest[1], rest[2]]
    };
    let expected_w = if spatial_rank == 3 {
        spec.weight_shape3d()
    } else {
        spec.weight_shape2d()
    };
    weight.expect_shape(&expected_w, "conv weight")?;
    if let Some(b) = bias {
        b.expect_shape(&[spec.out_channels], "conv bias")?;
    }
    let output = spec.output_extent(input)?;
    Ok(Plan {
        batch,
        batched,
        input,
        output,
        spec: *spec,
    })
}

fn out_shape(p: &Plan, spatial_rank: usize) -> Vec<usize> {
    let mut s = Vec::with_capacity(5);
    if p.batched {
        s.push(p.batch);
    }
    s.push(p.spec.out_channels);
    if spatial_rank == 3 {
        s.extend_from_slice(&p.output);
    } else {
        s.extend_from_slice(&p.output[1..]);
    }
    s
}

/// Fills `col` (`[in*kd*kh*kw, od*oh*ow]`) from one sample.
fn im2col(x: &[f64], p: &Plan, col: &mut [f64]) {
    let npix = p.out_pixels();
    let mut row = 0;
    for_each_tap(p, |c, tap| {
        let xc = &x[c * p.in_channel_len()..(c + 1) * p.in_channel_len()];
        let dst = &mut col[row * npix..(row + 1) * npix];
        dst.fill(0.0);
        tap.for_each_run(p, |q, src, len| {
            let sw = p.spec.stride[2];
            if sw == 1 {
                dst[q..q + len].copy_from_slice(&xc[src..src + len]);
            } else {
                for (i, d) in dst[q..q + len].iter_mut().enumerate() {
                    *d = xc[src + i * sw];
                }
            }
        });
        row += 1;
    });
}

/// Scatter-adds `col` back onto one input sample.
fn col2im(col: &[f64], p: &Plan, dx: &mut [f64]) {
    let npix = p.out_pixels();
    let mut row = 0;
    for_each_tap(p, |c, tap| {
        let dxc = &mut dx[c * p.in_channel_len()..(c + 1) * p.in_channel_len()];
        let srcrow = &col[row * npix..(row + 1) * npix];
        tap.for_each_run(p, |q, dst, len| {
            let sw = p.spec.stride[2];
            if sw == 1 {
                for (d, s) in dxc[dst..dst + len].iter_mut().zip(&srcrow[q..q + len]) {
                    *d += s;
                }
            } else {
                for (i, s) in srcrow[q..q + len].iter().enumerate() {
                    dxc[dst + i * sw] += s;
                }
            }
        });
        row += 1;
    });
}

/// One kernel offset `(a, b, e)` within an input channel.
struct Tap {
    offset: [usize; 3],
}

impl Tap {
    /// Calls `f(col_index, input_index, len)` for every contiguous run of in-bounds
    /// output columns along the innermost axis.
    fn for_each_run(&self, p: &Plan, mut f: impl FnMut(usize, usize, usize)) {
        let [id, ih, iw] = p.input;
        let [od, oh, ow] = p.output;
        let [sd, sh, sw] = p.spec.stride;
        let [pd, ph, pw] = p.spec.padding;
        let [a, b, e] = self.offset;
        // valid xo satisfy pw <= xo*sw + e < iw + pw
        let lo = if pw > e { (pw - e).div_ceil(sw) } else { 0 };
        let hi = if iw + pw > e {
            ((iw + pw - e - 1) / sw + 1).min(ow)
        } else {
            0
        };
        if lo >= hi {
            return;
        }
        let len = hi - lo;
        let x0 = lo * sw + e - pw;
        for z in 0..od {
            let zi = z * sd + a;
            if zi < pd || zi - pd >= id {
                continue;
            }
            for y in 0..oh {
                let yi = y * sh + b;
                if yi < ph || yi - ph >= ih {
                    continue;
                }
                let q = (z * oh + y) * ow + lo;
                f(q, ((zi - pd) * ih + yi - ph) * iw + x0, len);
            }
        }
    }
}

/// Visits kernel taps in column-row order: channel, then depth, height, width offsets.
fn for_each_tap(p: &Plan, mut f: impl FnMut(usize, Tap)) {
    let [kd, kh, kw] = p.spec.kernel;
    for c in 0..p.spec.in_channels {
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    f(c, Tap { offset: [a, b, e] });
                }
            }
        }
    }
}

fn forward(
    x: &Tensor,
    spec: &ConvSpec,
    rank: usize,
    weight: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    let p = plan(x, spec, rank, weight, Some(bias))?;
    let npix = p.out_pixels();
    let rows = p.col_rows();
    let cout = spec.out_channels;
    let mut col = vec![0.0; rows * npix];
    let mut out = vec![0.0; p.batch * cout * npix];
    for n in 0..p.batch {
        let xs = &x.data()[n * p.in_len()..(n + 1) * p.in_len()];
        im2col(xs, &p, &mut col);
        let os = &mut out[n * cout * npix..(n + 1) * cout * npix];
        for (o, &b) in bias.data().iter().enumerate() {
            os[o * npix..(o + 1) * npix].fill(b);
        }
        gemm_nn(cout, rows, npix, weight.data(), &col, 1.0, os);
    }
    Tensor::new(out_shape(&p, rank), out)
}

/// Backward pass; when `want_input_grad` is false the returned `d_input` is all zeros
/// and the col2im scatter is skipped.
pub(crate) fn backward_impl(
    x: &Tensor,
    spec: &ConvSpec,
    rank: usize,
    weight: &Tensor,
    d_out: &Tensor,
    want_input_grad: bool,
) -> Result<LayerGrads> {
    let p = plan(x, spec, rank, weight, None)?;
    let expected = out_shape(&p, rank);
    d_out.expect_shape(&expected, "conv upstream gradient")?;
    let npix = p.out_pixels();
    let rows = p.col_rows();
    let cout = spec.out_channels;
    let mut col = vec![0.0; rows * npix];
    let mut dcol = vec![0.0; rows * npix];
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; cout];
    let mut dx = vec![0.0; x.len()];
    for n in 0..p.batch {
        let xs = &x.data()[n * p.in_len()..(n + 1) * p.in_len()];
        let ds = &d_out.data()[n * cout * npix..(n + 1) * cout * npix];
        im2col(xs, &p, &mut col);
        gemm_nt(cout, npix, rows, ds, &col, 1.0, &mut dw);
        for (o, acc) in db.iter_mut().enumerate() {
            *acc += ds[o * npix..(o + 1) * npix].iter().sum::<f64>();
        }
        if want_input_grad {
            gemm_tn(rows, cout, npix, weight.data(), ds, 0.0, &mut dcol);
            col2im(&dcol, &p, &mut dx[n * p.in_len()..(n + 1) * p.in_len()]);
        }
    }
    let mut d_params = BTreeMap::new();
    d_params.insert(
        "weight".to_string(),
        Tensor::new(weight.shape().to_vec(), dw)?,
    );
    d_params.insert("bias".to_string(), Tensor::vector(db));
    Ok(LayerGrads {
        d_input: Tensor::new(x.shape().to_vec(), dx)?,
        d_params,
    })
}

/// 3-D convolution of `[C_in, D, H, W]` (or `[N, C_in, D, H, W]`) with weights `[C_out, C_in, kd, kh, kw]`.
pub fn conv3d(x: &Tensor, spec: &ConvSpec, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    forward(x, spec, 3, weight, bias)
}

/// Gradients of [`conv3d`] for upstream gradient `d_out`; parameters are named `weight` and `bias`.
pub fn conv3d_backward(
    x: &Tensor,
    spec: &ConvSpec,
    weight: &Tensor,
    d_out: &Tensor,
) -> Result<LayerGrads> {
    backward_impl(x, spec, 3, weight, d_out, true)
}

/// 2-D convolution of `[C_in, H, W]` (or `[N, C_in, H, W]`) with weights `[C_out, C_in, kh, kw]`.
pub fn conv2d(x: &Tensor, spec: &ConvSpec, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    forward(x, spec, 2, weight, bias)
}

pub fn conv2d_backward(
    x: &Tensor,
    spec: &ConvSpec,
    weight: &Tensor,
    d_out: &Tensor,
) -> Result<LayerGrads> {
    backward_impl(x, spec, 2, weight, d_out, true)
}
