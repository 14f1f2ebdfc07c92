//! Named parameter access shared by the two models.

use crate::error::{shape_err, Result};
use crate::kernels::{adam_step, grad_check_piecewise, AdamState, GradCheckReport};
use crate::tensor::Tensor;

/// A model whose trainable tensors can be enumerated in a fixed order.
pub trait Parameters {
    /// Names and tensors, in the order gradients are reported.
    fn named_params(&self) -> Vec<(String, &Tensor)>;

    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_names(&self) -> Vec<String> {
        self.named_params().into_iter().map(|(n, _)| n).collect()
    }

    fn param_tensors(&self) -> Vec<Tensor> {
        self.named_params()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect()
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Overwrites every parameter; shapes must match.
    fn set_params(&mut self, values: &[Tensor]) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return shape_err(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                values.len()
            ));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if !slot.same_shape(v) {
                return shape_err(format!(
                    "parameter shape {:?} given {:?}",
                    slot.shape(),
                    v.shape()
                ));
            }
            **slot = v.clone();
        }
        Ok(())
    }
}

/// Applies one Adam step to every parameter of `model`.
pub fn apply_adam<M: Parameters>(
    model: &mut M,
    grads: &[Tensor],
    state: &mut AdamState,
) -> Result<()> {
    let mut params = model.params_mut();
    adam_step(&mut params, grads, state)
}

/// Finite-difference check of `analytic` (one tensor per parameter) against `loss`.
pub fn check_model_gradients<M: Parameters + Clone>(
    model: &M,
    mut loss: impl FnMut(&M) -> Result<f64>,
    analytic: &[Tensor],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    check_model_gradients_piecewise(model, |m| Ok((loss(m)?, 0)), analytic, h, tolerance)
}

/// As [`check_model_gradients`], skipping coordinates whose stencil changes the
/// activation fingerprint returned alongside the loss.
pub fn check_model_gradients_piecewise<M: Parameters + Clone>(
    model: &M,
    mut loss: impl FnMut(&M) -> Result<(f64, u64)>,
    analytic: &[Tensor],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let inputs = model.param_tensors();
    let mut probe = model.clone();
    grad_check_piecewise(
        |values| {
            probe.set_params(values)?;
            loss(&probe)
        },
        &inputs,
        analytic,
        h,
        tolerance,
    )
}

/// Elementwise sum of two gradient lists.
pub(crate) fn accumulate(into: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
    for (a, g) in into.iter_mut().zip(grads) {
        a.add_assign(g)?;
    }
    Ok(())
}
