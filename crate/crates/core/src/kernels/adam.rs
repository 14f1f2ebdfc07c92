//! Bias-corrected Adam with weight decay applied as an additive gradient term.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamState {
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// One optimizer step: `g <- g + wd * p`, moment updates, bias correction, `p <- p - lr * m_hat / (sqrt(v_hat) + eps)`.
///
/// Moments are allocated on the first call.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
) -> Result<()> {
    if params.len() != grads.len() {
        return shape_err(format!(
            "adam: {} params vs {} grads",
            params.len(),
            grads.len()
        ));
    }
    if state.first_moment.is_empty() {
        state.first_moment = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        state.second_moment = state.first_moment.clone();
    }
    if state.first_moment.len() != params.len() {
        return shape_err("adam: optimizer state does not match parameter count");
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if !p.same_shape(g) || !p.same_shape(&state.first_moment[i]) {
            return shape_err(format!("adam: shape mismatch at parameter {i}"));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        let g = grads[i].data();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j] + state.weight_decay * *w;
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_on_unit_gradient() {
        let mut p = Tensor::vector(vec![0.0]);
        let mut st = AdamState::new(1e-3, 0.0);
        adam_step(&mut [&mut p], &[Tensor::vector(vec![1.0])], &mut st).unwrap();
        // m_hat = 1, v_hat = 1 -> -lr / (1 + 1e-8)
        assert!((p.data()[0] - (-9.999_999_9e-4)).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Tensor::vector(vec![0.3, -1.2]);
        let before = p.clone();
        let mut st = AdamState::new(1e-3, 0.0);
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[Tensor::zeros(&[2])], &mut st).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step_count, 5);
    }
}
