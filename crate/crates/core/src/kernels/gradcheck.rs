//! Central finite-difference gradient checking.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Denominator floor for the relative error.
const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input tensor, flat coordinate) of the worst disagreement.
    pub worst: (usize, usize),
    pub checked: usize,
    /// Coordinates compared with a reduced step because `h` crossed a kink.
    pub refined: usize,
    /// Coordinates that crossed a kink even at the smallest step (see [`grad_check_piecewise`]).
    pub skipped: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.refined += other.refined;
        self.skipped += other.skipped;
    }

    /// Share of coordinates left out because of kinks.
    pub fn skipped_fraction(&self) -> f64 {
        let total = self.checked + self.skipped;
        if total == 0 {
            0.0
        } else {
            self.skipped as f64 / total as f64
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic[i]` against `(f(x + h e_j) - f(x - h e_j)) / 2h` for every coordinate of every input.
pub fn grad_check(
    mut f: impl FnMut(&[Tensor]) -> Result<f64>,
    inputs: &[Tensor],
    analytic: &[Tensor],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    grad_check_piecewise(|x| Ok((f(x)?, 0)), inputs, analytic, h, tolerance)
}

/// Like [`grad_check`] for piecewise-smooth functions. `f` also returns a
/// fingerprint of its active piece (ReLU signs, pooling argmaxes). A coordinate
/// whose `x ± h` evaluations land on a different piece than `x` straddles a
/// kink, where the central difference is not a derivative estimate. Such a
/// coordinate is retried with `h/10` and `h/100`; if every step still crosses,
/// it is counted in `skipped` instead of compared.
pub fn grad_check_piecewise(
    mut f: impl FnMut(&[Tensor]) -> Result<(f64, u64)>,
    inputs: &[Tensor],
    analytic: &[Tensor],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if inputs.len() != analytic.len() {
        return shape_err("grad_check: one analytic gradient per input required");
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
        refined: 0,
        skipped: 0,
        tolerance,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    let (_, base) = f(&work)?;
    let steps = [h, h / 10.0, h / 100.0];
    for (ti, grad) in analytic.iter().enumerate() {
        if !grad.same_shape(&inputs[ti]) {
            return shape_err(format!(
                "grad_check: gradient {ti} shape differs from its input"
            ));
        }
        for j in 0..inputs[ti].len() {
            let orig = inputs[ti].data()[j];
            let mut numeric = None;
            for (attempt, &step) in steps.iter().enumerate() {
                work[ti].data_mut()[j] = orig + step;
                let (fp, pp) = f(&work)?;
                work[ti].data_mut()[j] = orig - step;
                let (fm, pm) = f(&work)?;
                work[ti].data_mut()[j] = orig;
                if pp == base && pm == base {
                    numeric = Some((fp - fm) / (2.0 * step));
                    if attempt > 0 {
                        report.refined += 1;
                    }
                    break;
                }
            }
            let Some(numeric) = numeric else {
                report.skipped += 1;
                continue;
            };
            let err = relative_error(grad.data()[j], numeric);
            if err > report.max_rel_error || report.checked == 0 {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = (ti, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_wrong_gradient_fails() {
        let x = Tensor::vector(vec![0.3, -1.5, 2.0]);
        let f = |t: &[Tensor]| Ok(t[0].data().iter().map(|v| v * v).sum::<f64>());
        let good = x.map(|v| 2.0 * v);
        let r = grad_check(f, std::slice::from_ref(&x), &[good], 1e-5, 1e-6).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.checked, 3);
        let bad = x.map(|v| 2.0 * v + 0.1);
        let r = grad_check(f, &[x], &[bad], 1e-5, 1e-6).unwrap();
        assert!(!r.passed());
    }
}
