//! Sample preparation, the two-stage learning-rate schedule, evaluation,
//! cross-validation and the ablation grid.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{ClassificationMetrics, MetricSummary};
use super::model::{ClassifierConfig, ClassifierModel};
use super::{ClassifierBatch, LossRecord};
use crate::data::{
    augment, extract_keyframe_window, extract_uniform_clip, Clip, FoldSplit, Label, VideoSample,
};
use crate::error::{config_err, Error, Result};
use crate::kernels::{AdamState, Mode};
use crate::params::apply_adam;
use crate::rng::{self, Rng};
use crate::similarity::{motion_index, MotionVector};
use crate::tensor::Tensor;

/// How a clip is cut from its video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipSampling {
    /// `T` consecutive frames centred on the key-frame.
    KeyFrame,
    /// `T` frames spread evenly over the whole video.
    Uniform,
}

/// One classifier input: clip, label and its windowed motion target.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierSample {
    pub id: String,
    pub label: Label,
    pub clip: Clip,
    pub v_motion: Vec<f64>,
}

/// Builds one sample per video. `key_frames[i]` is the centre used for
/// key-frame sampling of `videos[i]` (ground truth or a localizer prediction).
pub fn prepare_samples(
    videos: &[VideoSample],
    key_frames: &[usize],
    sampling: ClipSampling,
    config: &ClassifierConfig,
) -> Result<Vec<ClassifierSample>> {
    if key_frames.len() != videos.len() {
        return config_err(format!(
            "{} key-frames for {} videos",
            key_frames.len(),
            videos.len()
        ));
    }
    let windows = config.trace()?.temporal_windows;
    videos
        .iter()
        .zip(key_frames)
        .map(|(v, &k)| {
            let clip = match sampling {
                ClipSampling::KeyFrame => {
                    extract_keyframe_window(v, k, config.clip_len, config.crop_size)?
                }
                ClipSampling::Uniform => {
                    extract_uniform_clip(v, config.clip_len, config.crop_size)?
                }
            };
            let m = motion_index(&v.frames)?;
            let mv = MotionVector::for_clip(&m, &clip.source_indices, windows)?;
            Ok(ClassifierSample {
                id: v.id.clone(),
                label: v.label,
                clip,
                v_motion: mv.windowed,
            })
        })
        .collect()
}

/// Stacks clips (optionally augmented) into one batch.
pub fn make_batch(
    samples: &[&ClassifierSample],
    augment_rng: Option<&mut Rng>,
) -> Result<ClassifierBatch> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Config("empty batch".into()))?;
    let n = samples.len();
    let mut shape = vec![n];
    shape.extend_from_slice(first.clip.voxels.shape());
    let mut data = Vec::with_capacity(n * first.clip.voxels.len());
    let mut motion = Vec::with_capacity(n * first.v_motion.len());
    let mut rng = augment_rng;
    for s in samples {
        match rng.as_deref_mut() {
            Some(r) => data.extend_from_slice(augment(&s.clip, r).voxels.data()),
            None => data.extend_from_slice(s.clip.voxels.data()),
        }
        motion.extend_from_slice(&s.v_motion);
    }
    Ok(ClassifierBatch {
        clips: Tensor::new(shape, data)?,
        labels: samples.iter().map(|s| s.label.as_f64()).collect(),
        v_motion: Tensor::new(vec![n, first.v_motion.len()], motion)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub lr: f64,
    /// Learning rate after the first `epochs`.
    pub lr_late: f64,
    pub epochs: usize,
    pub epochs_late: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub augment: bool,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            lr: 1e-3,
            lr_late: 1e-4,
            epochs: 20,
            epochs_late: 20,
            weight_decay: 1e-8,
            batch_size: 16,
            augment: true,
        }
    }
}

impl ClassifierTrainConfig {
    /// Learning rate for zero-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.epochs {
            self.lr
        } else {
            self.lr_late
        }
    }
}

/// Sample-weighted mean losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// One-based.
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLog>,
    pub optimizer: AdamState,
}

/// One optimizer step on `batch`; batch statistics are folded into the running estimates.
pub fn train_step(
    model: &mut ClassifierModel,
    batch: &ClassifierBatch,
    state: &mut AdamState,
    dropout_rng: &mut Rng,
) -> Result<LossRecord> {
    let (record, grads, cache) = model.loss_and_grads(batch, Mode::Train, dropout_rng)?;
    if !record.total.is_finite() {
        return Err(Error::NonFinite(format!("classifier loss {:?}", record)));
    }
    model.update_running_stats(&cache);
    apply_adam(model, &grads, state)?;
    Ok(record)
}

fn stream_index(run: u64, epoch: usize) -> u64 {
    (run << 32) | epoch as u64
}

fn check_both_classes<'a>(
    samples: impl IntoIterator<Item = &'a ClassifierSample>,
    what: &str,
) -> Result<()> {
    let (mut b, mut m) = (0, 0);
    for s in samples {
        match s.label {
            Label::Benign => b += 1,
            Label::Malignant => m += 1,
        }
    }
    if b == 0 || m == 0 {
        return config_err(format!(
            "{what} has a single class ({b} benign, {m} malignant)"
        ));
    }
    Ok(())
}

/// Trains on `samples` with the two-stage schedule. `run` selects independent
/// shuffle, augmentation and dropout streams (one per fold).
pub fn train_classifier(
    model: &mut ClassifierModel,
    samples: &[ClassifierSample],
    cfg: &ClassifierTrainConfig,
    seed: u64,
    run: u64,
) -> Result<TrainHistory> {
    if samples.is_empty() || cfg.batch_size == 0 {
        return config_err("classifier training needs samples and a positive batch size");
    }
    check_both_classes(samples, "training set")?;
    let mut state = AdamState::new(cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::new();
    for epoch in 0..cfg.epochs + cfg.epochs_late {
        let idx = stream_index(run, epoch);
        state.lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng::stream(seed, rng::SHUFFLE, idx));
        let mut aug = rng::stream(seed, rng::AUGMENT, idx);
        let mut drop = rng::stream(seed, rng::DROPOUT, idx);
        let (mut cls, mut mot) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch_samples: Vec<&ClassifierSample> =
                chunk.iter().map(|&i| &samples[i]).collect();
            let batch = make_batch(&batch_samples, cfg.augment.then_some(&mut aug))?;
            let r = train_step(model, &batch, &mut state, &mut drop)?;
            cls += r.l_cls * chunk.len() as f64;
            mot += r.l_motion * chunk.len() as f64;
        }
        let n = samples.len() as f64;
        epochs.push(EpochLog {
            epoch: epoch + 1,
            lr: state.lr,
            loss: LossRecord::new(cls / n, mot / n),
        });
    }
    Ok(TrainHistory {
        epochs,
        optimizer: state,
    })
}

/// Per-sample eval-mode outputs and the resulting metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: ClassificationMetrics,
    /// `(video id, probability, label)`.
    pub predictions: Vec<(String, f64, Label)>,
}

pub fn evaluate(model: &ClassifierModel, samples: &[ClassifierSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return config_err("nothing to evaluate");
    }
    let mut predictions = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(16) {
        let refs: Vec<&ClassifierSample> = chunk.iter().collect();
        let batch = make_batch(&refs, None)?;
        let probs = model.predict(&batch.clips)?;
        for (s, p) in chunk.iter().zip(probs) {
            predictions.push((s.id.clone(), p, s.label));
        }
    }
    let probs: Vec<f64> = predictions.iter().map(|p| p.1).collect();
    let labels: Vec<f64> = predictions.iter().map(|p| p.2.as_f64()).collect();
    Ok(Evaluation {
        metrics: ClassificationMetrics::from_predictions(&probs, &labels),
        predictions,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub evaluation: Evaluation,
    pub history: TrainHistory,
    pub model: ClassifierModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossValResult {
    pub folds: Vec<FoldResult>,
    pub mean: MetricSummary,
}

/// Trains a fresh model per fold on the other folds and evaluates on the held-out one.
pub fn crossval(
    samples: &[ClassifierSample],
    split: &FoldSplit,
    config: &ClassifierConfig,
    train: &ClassifierTrainConfig,
    seed: u64,
) -> Result<CrossValResult> {
    let by_id: BTreeMap<&str, &ClassifierSample> =
        samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let gather = |ids: Vec<String>| -> Result<Vec<ClassifierSample>> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|s| (*s).clone())
                    .ok_or_else(|| Error::Config(format!("fold lists unknown video {id}")))
            })
            .collect()
    };
    let mut folds = Vec::with_capacity(split.k);
    for f in 0..split.k {
        let test = gather(split.fold(f))?;
        let train_set = gather(split.complement(f))?;
        check_both_classes(&test, &format!("test fold {f}"))?;
        let mut model = ClassifierModel::new(config.clone(), seed, f as u64)?;
        let history = train_classifier(&mut model, &train_set, train, seed, f as u64)?;
        let evaluation = evaluate(&model, &test)?;
        folds.push(FoldResult {
            fold: f,
            evaluation,
            history,
            model,
        });
    }
    let mean = MetricSummary::mean(
        &folds
            .iter()
            .map(|f| f.evaluation.metrics.summary())
            .collect::<Vec<_>>(),
    );
    Ok(CrossValResult { folds, mean })
}

/// One cell of the sampling x pooling x attention grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub sampling: ClipSampling,
    pub spp: bool,
    pub attention: bool,
}

impl AblationVariant {
    /// All eight variants, full model first and baseline last.
    pub fn grid() -> Vec<AblationVariant> {
        let mut out = Vec::with_capacity(8);
        for sampling in [ClipSampling::KeyFrame, ClipSampling::Uniform] {
            for spp in [true, false] {
                for attention in [true, false] {
                    out.push(AblationVariant {
                        sampling,
                        spp,
                        attention,
                    });
                }
            }
        }
        out
    }

    pub fn name(&self) -> String {
        let s = match self.sampling {
            ClipSampling::KeyFrame => "keyframe",
            ClipSampling::Uniform => "uniform",
        };
        format!(
            "{s}+{}+{}",
            if self.spp { "spp" } else { "flatten" },
            if self.attention {
                "attention"
            } else {
                "no-attention"
            }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub mean: MetricSummary,
    pub histories: Vec<TrainHistory>,
}

/// Cross-validates every variant on the same folds and seed.
pub fn ablate(
    videos: &[VideoSample],
    key_frames: &[usize],
    split: &FoldSplit,
    base: &ClassifierConfig,
    train: &ClassifierTrainConfig,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let mut cached: BTreeMap<bool, Vec<ClassifierSample>> = BTreeMap::new();
    let mut rows = Vec::with_capacity(8);
    for variant in AblationVariant::grid() {
        let key = variant.sampling == ClipSampling::KeyFrame;
        if let std::collections::btree_map::Entry::Vacant(e) = cached.entry(key) {
            e.insert(prepare_samples(videos, key_frames, variant.sampling, base)?);
        }
        let config = ClassifierConfig {
            spp: variant.spp,
            attention: variant.attention,
            ..base.clone()
        };
        let cv = crossval(&cached[&key], split, &config, train, seed)?;
        rows.push(AblationRow {
            variant,
            mean: cv.mean,
            histories: cv.folds.into_iter().map(|f| f.history).collect(),
        });
    }
    Ok(rows)
}

pub fn write_ablation_csv<W: Write>(mut out: W, rows: &[AblationRow]) -> std::io::Result<()> {
    writeln!(
        out,
        "variant,sampling,spp,attention,{}",
        MetricSummary::COLUMNS.join(",")
    )?;
    for r in rows {
        let v = r.variant;
        let sampling = match v.sampling {
            ClipSampling::KeyFrame => "keyframe",
            ClipSampling::Uniform => "uniform",
        };
        let m = r.mean.values().map(|x| x.to_string()).join(",");
        writeln!(out, "{},{sampling},{},{},{m}", v.name(), v.spp, v.attention)?;
    }
    Ok(())
}

/// Per-epoch loss log; the motion column is left out when attention is off.
pub fn write_history_csv<W: Write>(
    mut out: W,
    history: &TrainHistory,
    attention: bool,
) -> std::io::Result<()> {
    if attention {
        writeln!(out, "epoch,lr,l_cls,l_motion,total")?;
    } else {
        writeln!(out, "epoch,lr,l_cls,total")?;
    }
    for e in &history.epochs {
        if attention {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.lr, e.loss.l_cls, e.loss.l_motion, e.loss.total
            )?;
        } else {
            writeln!(
                out,
                "{},{},{},{}",
                e.epoch, e.lr, e.loss.l_cls, e.loss.total
            )?;
        }
    }
    Ok(())
}
