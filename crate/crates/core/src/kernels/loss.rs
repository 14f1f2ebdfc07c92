//! Scalar losses: binary cross-entropy, mean squared error, and the cosine
//! consistency loss between learned temporal weights and the motion vector.

use crate::error::{config_err, shape_err, Result};

/// Probabilities are clamped into `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-12;

fn clamp_prob(z: f64) -> f64 {
    z.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
}

/// Mean binary cross-entropy over the batch.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return shape_err("bce: probability and label counts differ or are empty");
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let z = clamp_prob(z);
            -(y * z.ln() + (1.0 - y) * (1.0 - z).ln())
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Gradient of [`bce_loss`] with respect to the logits feeding a sigmoid that produced `probs`.
/// Zero where the clamp is active.
pub fn bce_loss_backward_logits(probs: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
    if probs.len() != labels.len() || probs.is_empty() {
        return shape_err("bce: probability and label counts differ or are empty");
    }
    let n = probs.len() as f64;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&z) {
                0.0
            } else {
                (z - y) / n
            }
        })
        .collect())
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return shape_err("mse: lengths differ or are empty");
    }
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(s / pred.len() as f64)
}

pub fn mse_loss_backward(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if pred.len() != target.len() || pred.is_empty() {
        return shape_err("mse: lengths differ or are empty");
    }
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect())
}

/// Norms below this are treated as zero; the cosine is then taken to be 0.
const COSINE_NORM_FLOOR: f64 = 1e-12;

fn norms_and_dot(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot, na, nb)
}

/// `1 - cos(v_temp, v_motion)`.
pub fn cosine_consistency_loss(v_temp: &[f64], v_motion: &[f64]) -> Result<f64> {
    if v_temp.len() != v_motion.len() {
        return config_err(format!(
            "cosine loss: temporal weights have length {}, motion vector {}",
            v_temp.len(),
            v_motion.len()
        ));
    }
    let (dot, na, nb) = norms_and_dot(v_temp, v_motion);
    if na < COSINE_NORM_FLOOR || nb < COSINE_NORM_FLOOR {
        return Ok(1.0);
    }
    Ok(1.0 - dot / (na * nb))
}

/// Gradient of [`cosine_consistency_loss`] with respect to `v_temp` only.
pub fn cosine_consistency_loss_backward(v_temp: &[f64], v_motion: &[f64]) -> Result<Vec<f64>> {
    if v_temp.len() != v_motion.len() {
        return config_err("cosine loss: length mismatch");
    }
    let (dot, na, nb) = norms_and_dot(v_temp, v_motion);
    if na < COSINE_NORM_FLOOR || nb < COSINE_NORM_FLOOR {
        return Ok(vec![0.0; v_temp.len()]);
    }
    let cos = dot / (na * nb);
    Ok(v_temp
        .iter()
        .zip(v_motion)
        .map(|(&t, &m)| -(m / (na * nb) - cos * t / (na * na)))
        .collect())
}
