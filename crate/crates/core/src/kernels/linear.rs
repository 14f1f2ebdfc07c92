//! Fully connected (affine) layer.

use std::collections::BTreeMap;

use super::LayerGrads;
use crate::error::{shape_err, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

fn dims(x: &Tensor, weight: &Tensor) -> Result<(usize, bool, usize, usize)> {
    let [out, inp] = *weight.shape() else {
        return shape_err(format!(
            "fc weight must be [out, in], got {:?}",
            weight.shape()
        ));
    };
    let (n, batched, xin) = match *x.shape() {
        [i] => (1, false, i),
        [n, i] => (n, true, i),
        _ => {
            return shape_err(format!(
                "fc input must be [in] or [N, in], got {:?}",
                x.shape()
            ))
        }
    };
    if xin != inp {
        return shape_err(format!(
            "fc input length {xin} does not match weight {:?}",
            weight.shape()
        ));
    }
    Ok((n, batched, out, inp))
}

/// `W x + b` for `x` of shape `[in]` or `[N, in]`.
pub fn fully_connected(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, batched, out, inp) = dims(x, weight)?;
    bias.expect_shape(&[out], "fc bias")?;
    let mut y = Vec::with_capacity(n * out);
    for _ in 0..n {
        y.extend_from_slice(bias.data());
    }
    gemm_nt(n, inp, out, x.data(), weight.data(), 1.0, &mut y);
    let shape = if batched { vec![n, out] } else { vec![out] };
    Tensor::new(shape, y)
}

/// Gradients named `weight` and `bias`; the batch contributions are summed.
pub fn fully_connected_backward(x: &Tensor, weight: &Tensor, d_out: &Tensor) -> Result<LayerGrads> {
    let (n, batched, out, inp) = dims(x, weight)?;
    let shape = if batched { vec![n, out] } else { vec![out] };
    d_out.expect_shape(&shape, "fc upstream gradient")?;
    let mut dx = vec![0.0; n * inp];
    gemm_nn(n, out, inp, d_out.data(), weight.data(), 0.0, &mut dx);
    let mut dw = vec![0.0; out * inp];
    gemm_tn(out, n, inp, d_out.data(), x.data(), 0.0, &mut dw);
    let mut db = vec![0.0; out];
    for row in d_out.data().chunks(out) {
        for (acc, g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    let mut d_params = BTreeMap::new();
    d_params.insert("weight".to_string(), Tensor::new(vec![out, inp], dw)?);
    d_params.insert("bias".to_string(), Tensor::vector(db));
    Ok(LayerGrads {
        d_input: Tensor::new(x.shape().to_vec(), dx)?,
        d_params,
    })
}
