//! Clip classifier: model, combined loss, training, evaluation and ablation.

pub mod metrics;
pub mod model;
pub mod train;

pub use metrics::{ClassificationMetrics, MetricSummary, DECISION_THRESHOLD};
pub use model::{
    apply_temporal_weights, ClassifierCache, ClassifierConfig, ClassifierModel, ShapeTrace,
};
pub use train::{
    ablate, crossval, evaluate, prepare_samples, train_classifier, train_step, write_ablation_csv,
    write_history_csv, AblationRow, AblationVariant, ClassifierSample, ClassifierTrainConfig,
    ClipSampling, CrossValResult, EpochLog, Evaluation, FoldResult, TrainHistory,
};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::kernels::{
    bce_loss, bce_loss_backward_logits, cosine_consistency_loss, cosine_consistency_loss_backward,
    Mode,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Classification, motion-consistency and total loss of one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub l_cls: f64,
    pub l_motion: f64,
    pub total: f64,
}

impl LossRecord {
    pub fn new(l_cls: f64, l_motion: f64) -> Self {
        LossRecord {
            l_cls,
            l_motion,
            total: l_cls + l_motion,
        }
    }
}

/// Mean BCE over the batch plus the batch mean of `1 - cos(v_temp, v_motion)`
/// (zero when no temporal weights are given).
pub fn compute_losses(
    probs: &[f64],
    labels: &[f64],
    v_temp: Option<&Tensor>,
    v_motion: &Tensor,
) -> Result<LossRecord> {
    let l_cls = bce_loss(probs, labels)?;
    let l_motion = match v_temp {
        Some(v) => motion_loss(v, v_motion)?,
        None => 0.0,
    };
    Ok(LossRecord::new(l_cls, l_motion))
}

fn motion_rows(v_temp: &Tensor, v_motion: &Tensor) -> Result<usize> {
    if !v_temp.same_shape(v_motion) || v_temp.rank() != 2 {
        return shape_err(format!(
            "temporal weights {:?} and motion targets {:?} must both be [N, T_w]",
            v_temp.shape(),
            v_motion.shape()
        ));
    }
    Ok(v_temp.shape()[1])
}

fn motion_loss(v_temp: &Tensor, v_motion: &Tensor) -> Result<f64> {
    let w = motion_rows(v_temp, v_motion)?;
    let n = v_temp.shape()[0] as f64;
    let mut sum = 0.0;
    for (a, b) in v_temp.data().chunks(w).zip(v_motion.data().chunks(w)) {
        sum += cosine_consistency_loss(a, b)?;
    }
    Ok(sum / n)
}

fn motion_loss_backward(v_temp: &Tensor, v_motion: &Tensor) -> Result<Tensor> {
    let w = motion_rows(v_temp, v_motion)?;
    let n = v_temp.shape()[0] as f64;
    let mut out = Vec::with_capacity(v_temp.len());
    for (a, b) in v_temp.data().chunks(w).zip(v_motion.data().chunks(w)) {
        out.extend(
            cosine_consistency_loss_backward(a, b)?
                .into_iter()
                .map(|g| g / n),
        );
    }
    Tensor::new(v_temp.shape().to_vec(), out)
}

/// Stacked clips, labels and motion targets.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierBatch {
    /// `[N, 1, T, S, S]`
    pub clips: Tensor,
    /// 1 for malignant, 0 for benign.
    pub labels: Vec<f64>,
    /// `[N, T_w]`
    pub v_motion: Tensor,
}

impl ClassifierModel {
    /// Forward pass, combined loss and parameter gradients for one batch.
    pub fn loss_and_grads(
        &self,
        batch: &ClassifierBatch,
        mode: Mode,
        dropout_rng: &mut Rng,
    ) -> Result<(LossRecord, Vec<Tensor>, ClassifierCache)> {
        let cache = self.forward(&batch.clips, mode, false, dropout_rng)?;
        let record = compute_losses(
            &cache.probs,
            &batch.labels,
            cache.v_temp.as_ref(),
            &batch.v_motion,
        )?;
        let d_logits = bce_loss_backward_logits(&cache.probs, &batch.labels)?;
        let d_v = match &cache.v_temp {
            Some(v) => Some(motion_loss_backward(v, &batch.v_motion)?),
            None => None,
        };
        let grads = self.backward(&cache, &d_logits, d_v.as_ref())?;
        Ok((record, grads, cache))
    }

    /// Total loss only, for finite-difference checks.
    pub fn total_loss(
        &self,
        batch: &ClassifierBatch,
        mode: Mode,
        dropout_rng: &mut Rng,
    ) -> Result<f64> {
        Ok(self.total_loss_with_pattern(batch, mode, dropout_rng)?.0)
    }

    /// Total loss and the activation fingerprint of the pass.
    pub fn total_loss_with_pattern(
        &self,
        batch: &ClassifierBatch,
        mode: Mode,
        dropout_rng: &mut Rng,
    ) -> Result<(f64, u64)> {
        let cache = self.forward(&batch.clips, mode, false, dropout_rng)?;
        let loss = compute_losses(
            &cache.probs,
            &batch.labels,
            cache.v_temp.as_ref(),
            &batch.v_motion,
        )?
        .total;
        Ok((loss, cache.activation_pattern()?))
    }
}
