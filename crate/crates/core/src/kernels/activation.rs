use rand::Rng as _;

use super::Mode;
use crate::error::{config_err, shape_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Subgradient 0 at 0.
pub fn relu_backward(x: &Tensor, d_out: &Tensor) -> Result<Tensor> {
    if !x.same_shape(d_out) {
        return shape_err("relu backward shape mismatch");
    }
    let data = x
        .data()
        .iter()
        .zip(d_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Numerically stable logistic function.
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Inverted dropout. Returns the output and the per-element scale mask used by
/// [`dropout_backward`]. Eval mode and `rate == 0` return the input unchanged and
/// draw nothing from `rng`.
pub fn dropout(x: &Tensor, rate: f64, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
    if !(0.0..1.0).contains(&rate) {
        return config_err(format!("dropout rate must lie in [0, 1), got {rate}"));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), Tensor::filled(x.shape(), 1.0)));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Tensor::from_fn(x.shape(), |_| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    });
    let out = x
        .data()
        .iter()
        .zip(mask.data())
        .map(|(v, m)| v * m)
        .collect();
    Ok((Tensor::new(x.shape().to_vec(), out)?, mask))
}

pub fn dropout_backward(mask: &Tensor, d_out: &Tensor) -> Result<Tensor> {
    if !mask.same_shape(d_out) {
        return shape_err("dropout backward shape mismatch");
    }
    let data = mask
        .data()
        .iter()
        .zip(d_out.data())
        .map(|(m, g)| m * g)
        .collect();
    Tensor::new(mask.shape().to_vec(), data)
}
