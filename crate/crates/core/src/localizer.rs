//! Key-frame localizer: per-detection descriptors embedded and scored by an LSTM.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::VideoSample;
use crate::error::{config_err, Error, Result};
use crate::kernels::{
    fully_connected, fully_connected_backward, glorot_uniform, lstm_sequence,
    lstm_sequence_backward, mse_loss, mse_loss_backward, relu, relu_backward, sigmoid, AdamState,
    LstmCache, LstmParams,
};
use crate::params::{accumulate, apply_adam, Parameters};
use crate::rng;
use crate::similarity::{generate_score_labels, ScoreSequence};
use crate::tensor::Tensor;

/// Length of the normalised box-plus-time vector.
pub const SPATIOTEMPORAL_DIM: usize = 5;

/// Appearance feature plus `(x1/W, y1/H, x2/W, y2/H, i/(N-1))` for one detection.
#[derive(Clone, Debug, PartialEq)]
pub struct NoduleDescriptor {
    pub appearance: Vec<f64>,
    pub spatiotemporal: [f64; SPATIOTEMPORAL_DIM],
}

pub fn build_descriptor(video: &VideoSample, frame: usize) -> Result<NoduleDescriptor> {
    let n = video.n_frames();
    let missing = || {
        Error::Data(format!(
            "video {}: frame {frame} has no detection",
            video.id
        ))
    };
    let roi = video
        .rois
        .get(frame)
        .copied()
        .flatten()
        .ok_or_else(missing)?;
    let appearance = video
        .features
        .get(frame)
        .cloned()
        .flatten()
        .ok_or_else(missing)?;
    let (w, h) = (video.width() as f64, video.height() as f64);
    let t = if n > 1 {
        frame as f64 / (n - 1) as f64
    } else {
        0.0
    };
    Ok(NoduleDescriptor {
        appearance,
        spatiotemporal: [
            roi.x1 as f64 / w,
            roi.y1 as f64 / h,
            roi.x2 as f64 / w,
            roi.y2 as f64 / h,
            t,
        ],
    })
}

/// Detected frames of one video stacked for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizerInputs {
    pub n_frames: usize,
    /// Frame index of each row, increasing.
    pub frames: Vec<usize>,
    /// `[F, feature_dim]`
    pub appearance: Tensor,
    /// `[F, 5]`
    pub spatiotemporal: Tensor,
}

impl LocalizerInputs {
    pub fn from_video(video: &VideoSample) -> Result<Self> {
        let frames: Vec<usize> = video
            .detected_frames()
            .into_iter()
            .filter(|&i| video.features[i].is_some())
            .collect();
        if frames.is_empty() {
            return Err(Error::Data(format!("video {} has no detections", video.id)));
        }
        let descriptors = frames
            .iter()
            .map(|&i| build_descriptor(video, i))
            .collect::<Result<Vec<_>>>()?;
        Self::from_descriptors(video.n_frames(), frames, &descriptors)
    }

    pub fn from_descriptors(
        n_frames: usize,
        frames: Vec<usize>,
        descriptors: &[NoduleDescriptor],
    ) -> Result<Self> {
        let f = descriptors.len();
        if f == 0 || frames.len() != f {
            return config_err("localizer inputs need one descriptor per listed frame");
        }
        let dim = descriptors[0].appearance.len();
        let mut app = Vec::with_capacity(f * dim);
        let mut st = Vec::with_capacity(f * SPATIOTEMPORAL_DIM);
        for d in descriptors {
            if d.appearance.len() != dim {
                return config_err("descriptors disagree in appearance length");
            }
            app.extend_from_slice(&d.appearance);
            st.extend_from_slice(&d.spatiotemporal);
        }
        Ok(LocalizerInputs {
            n_frames,
            frames,
            appearance: Tensor::new(vec![f, dim], app)?,
            spatiotemporal: Tensor::new(vec![f, SPATIOTEMPORAL_DIM], st)?,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizerConfig {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub head_dim: usize,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        LocalizerConfig {
            feature_dim: crate::data::FEATURE_DIM,
            embed_dim: 256,
            hidden_dim: 256,
            head_dim: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizerModel {
    pub config: LocalizerConfig,
    pub appearance_weight: Tensor,
    pub appearance_bias: Tensor,
    pub spatial_weight: Tensor,
    pub spatial_bias: Tensor,
    pub lstm: LstmParams,
    pub head_hidden_weight: Tensor,
    pub head_hidden_bias: Tensor,
    pub head_out_weight: Tensor,
    pub head_out_bias: Tensor,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LocalizerCache {
    appearance_pre: Tensor,
    spatial_pre: Tensor,
    lstm_in: Tensor,
    lstm_cache: LstmCache,
    hidden: Tensor,
    head_pre: Tensor,
    head_act: Tensor,
    pub probs: Vec<f64>,
}

impl LocalizerModel {
    pub fn zeros(config: LocalizerConfig) -> Self {
        let (f, e, h, d) = (
            config.feature_dim,
            config.embed_dim,
            config.hidden_dim,
            config.head_dim,
        );
        LocalizerModel {
            appearance_weight: Tensor::zeros(&[e, f]),
            appearance_bias: Tensor::zeros(&[e]),
            spatial_weight: Tensor::zeros(&[e, SPATIOTEMPORAL_DIM]),
            spatial_bias: Tensor::zeros(&[e]),
            lstm: LstmParams::zeros(2 * e, h),
            head_hidden_weight: Tensor::zeros(&[d, h]),
            head_hidden_bias: Tensor::zeros(&[d]),
            head_out_weight: Tensor::zeros(&[1, d]),
            head_out_bias: Tensor::zeros(&[1]),
            config,
        }
    }

    /// Glorot-uniform weights from the init stream, zero biases.
    pub fn new(config: LocalizerConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, rng::INIT, 0);
        let mut m = Self::zeros(config);
        let (f, e, h, d) = (
            m.config.feature_dim,
            m.config.embed_dim,
            m.config.hidden_dim,
            m.config.head_dim,
        );
        m.appearance_weight = glorot_uniform(&[e, f], f, e, &mut r);
        m.spatial_weight = glorot_uniform(&[e, SPATIOTEMPORAL_DIM], SPATIOTEMPORAL_DIM, e, &mut r);
        m.lstm.w_ih = glorot_uniform(&[4 * h, 2 * e], 2 * e, 4 * h, &mut r);
        m.lstm.w_hh = glorot_uniform(&[4 * h, h], h, 4 * h, &mut r);
        m.head_hidden_weight = glorot_uniform(&[d, h], h, d, &mut r);
        m.head_out_weight = glorot_uniform(&[1, d], d, 1, &mut r);
        m
    }

    pub fn forward(&self, inputs: &LocalizerInputs) -> Result<LocalizerCache> {
        let f = inputs.len();
        let e = self.config.embed_dim;
        let appearance_pre = fully_connected(
            &inputs.appearance,
            &self.appearance_weight,
            &self.appearance_bias,
        )?;
        let spatial_pre = fully_connected(
            &inputs.spatiotemporal,
            &self.spatial_weight,
            &self.spatial_bias,
        )?;
        let (a, s) = (relu(&appearance_pre), relu(&spatial_pre));
        let mut joined = Vec::with_capacity(f * 2 * e);
        for t in 0..f {
            joined.extend_from_slice(&a.data()[t * e..(t + 1) * e]);
            joined.extend_from_slice(&s.data()[t * e..(t + 1) * e]);
        }
        let lstm_in = Tensor::new(vec![f, 2 * e], joined)?;
        let zero = Tensor::zeros(&[self.config.hidden_dim]);
        let (hidden, lstm_cache) = lstm_sequence(&lstm_in, &self.lstm, &zero, &zero)?;
        let head_pre = fully_connected(&hidden, &self.head_hidden_weight, &self.head_hidden_bias)?;
        let head_act = relu(&head_pre);
        let logits = fully_connected(&head_act, &self.head_out_weight, &self.head_out_bias)?;
        let probs = sigmoid(&logits).into_data();
        if let Some(bad) = probs.iter().find(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("localizer score {bad}")));
        }
        Ok(LocalizerCache {
            appearance_pre,
            spatial_pre,
            lstm_in,
            lstm_cache,
            hidden,
            head_pre,
            head_act,
            probs,
        })
    }

    /// Parameter gradients (in [`Parameters`] order) for upstream `d_probs`.
    pub fn backward(
        &self,
        inputs: &LocalizerInputs,
        cache: &LocalizerCache,
        d_probs: &[f64],
    ) -> Result<Vec<Tensor>> {
        let f = inputs.len();
        let e = self.config.embed_dim;
        if d_probs.len() != f {
            return config_err(format!(
                "{} score gradients for {f} detections",
                d_probs.len()
            ));
        }
        let d_logits: Vec<f64> = cache
            .probs
            .iter()
            .zip(d_probs)
            .map(|(p, g)| g * p * (1.0 - p))
            .collect();
        let d_logits = Tensor::new(vec![f, 1], d_logits)?;
        let out = fully_connected_backward(&cache.head_act, &self.head_out_weight, &d_logits)?;
        let d_head_pre = relu_backward(&cache.head_pre, &out.d_input)?;
        let hid = fully_connected_backward(&cache.hidden, &self.head_hidden_weight, &d_head_pre)?;
        let lstm = lstm_sequence_backward(
            &cache.lstm_in,
            &self.lstm,
            &cache.hidden,
            &cache.lstm_cache,
            &hid.d_input,
        )?;
        let mut d_a = Vec::with_capacity(f * e);
        let mut d_s = Vec::with_capacity(f * e);
        for row in lstm.d_inputs.data().chunks(2 * e) {
            d_a.extend_from_slice(&row[..e]);
            d_s.extend_from_slice(&row[e..]);
        }
        let d_a = relu_backward(&cache.appearance_pre, &Tensor::new(vec![f, e], d_a)?)?;
        let d_s = relu_backward(&cache.spatial_pre, &Tensor::new(vec![f, e], d_s)?)?;
        let app = fully_connected_backward(&inputs.appearance, &self.appearance_weight, &d_a)?;
        let spa = fully_connected_backward(&inputs.spatiotemporal, &self.spatial_weight, &d_s)?;
        Ok(vec![
            app.param("weight").clone(),
            app.param("bias").clone(),
            spa.param("weight").clone(),
            spa.param("bias").clone(),
            lstm.d_w_ih,
            lstm.d_w_hh,
            lstm.d_bias,
            hid.param("weight").clone(),
            hid.param("bias").clone(),
            out.param("weight").clone(),
            out.param("bias").clone(),
        ])
    }

    /// MSE against `targets` (one per detection) and its parameter gradients.
    pub fn loss_and_grads(
        &self,
        inputs: &LocalizerInputs,
        targets: &[f64],
    ) -> Result<(f64, Vec<Tensor>)> {
        let cache = self.forward(inputs)?;
        let loss = mse_loss(&cache.probs, targets)?;
        let d = mse_loss_backward(&cache.probs, targets)?;
        Ok((loss, self.backward(inputs, &cache, &d)?))
    }

    pub fn loss(&self, inputs: &LocalizerInputs, targets: &[f64]) -> Result<f64> {
        mse_loss(&self.forward(inputs)?.probs, targets)
    }
}

impl Parameters for LocalizerModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        [
            ("appearance.weight", &self.appearance_weight),
            ("appearance.bias", &self.appearance_bias),
            ("spatiotemporal.weight", &self.spatial_weight),
            ("spatiotemporal.bias", &self.spatial_bias),
            ("lstm.w_ih", &self.lstm.w_ih),
            ("lstm.w_hh", &self.lstm.w_hh),
            ("lstm.bias", &self.lstm.bias),
            ("head.hidden.weight", &self.head_hidden_weight),
            ("head.hidden.bias", &self.head_hidden_bias),
            ("head.out.weight", &self.head_out_weight),
            ("head.out.bias", &self.head_out_bias),
        ]
        .into_iter()
        .map(|(n, t)| (n.to_string(), t))
        .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.appearance_weight,
            &mut self.appearance_bias,
            &mut self.spatial_weight,
            &mut self.spatial_bias,
            &mut self.lstm.w_ih,
            &mut self.lstm.w_hh,
            &mut self.lstm.bias,
            &mut self.head_hidden_weight,
            &mut self.head_hidden_bias,
            &mut self.head_out_weight,
            &mut self.head_out_bias,
        ]
    }
}

/// Scores for every frame of `video`; frames without a detection score 0.
pub fn localizer_forward(model: &LocalizerModel, video: &VideoSample) -> Result<ScoreSequence> {
    let inputs = LocalizerInputs::from_video(video)?;
    scores_for(model, &inputs)
}

fn scores_for(model: &LocalizerModel, inputs: &LocalizerInputs) -> Result<ScoreSequence> {
    let cache = model.forward(inputs)?;
    let mut values = vec![0.0; inputs.n_frames];
    for (&i, &p) in inputs.frames.iter().zip(&cache.probs) {
        values[i] = p;
    }
    ScoreSequence::new(values)
}

/// Index of the largest score; ties go to the smallest index.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn predict_keyframe(model: &LocalizerModel, video: &VideoSample) -> Result<usize> {
    let inputs = LocalizerInputs::from_video(video)?;
    predict_from_inputs(model, &inputs)
}

fn predict_from_inputs(model: &LocalizerModel, inputs: &LocalizerInputs) -> Result<usize> {
    let probs = model.forward(inputs)?.probs;
    let j = argmax_first(&probs).expect("inputs are non-empty");
    Ok(inputs.frames[j])
}

/// Fraction of samples with `|pred - label| <= tolerance`.
pub fn accuracy_at_tolerance(
    predictions: &[usize],
    labels: &[usize],
    tolerance: usize,
) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return config_err(format!(
            "accuracy needs equal non-empty lists, got {} predictions and {} labels",
            predictions.len(),
            labels.len()
        ));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p.abs_diff(**l) <= tolerance)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Accuracy for every tolerance `0..=max_tolerance`.
pub fn accuracy_curve(
    predictions: &[usize],
    labels: &[usize],
    max_tolerance: usize,
) -> Result<Vec<(usize, f64)>> {
    (0..=max_tolerance)
        .map(|d| Ok((d, accuracy_at_tolerance(predictions, labels, d)?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizerTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
}

impl Default for LocalizerTrainConfig {
    fn default() -> Self {
        LocalizerTrainConfig {
            lr: 0.01,
            batch_size: 64,
            epochs: 20,
            weight_decay: 0.0,
        }
    }
}

/// One video ready for training: stacked descriptors and score labels at the detected frames.
#[derive(Clone, Debug)]
pub struct LocalizerExample {
    pub inputs: LocalizerInputs,
    pub targets: Vec<f64>,
}

impl LocalizerExample {
    pub fn from_video(video: &VideoSample) -> Result<Self> {
        let inputs = LocalizerInputs::from_video(video)?;
        let labels = generate_score_labels(video)?;
        let targets = inputs.frames.iter().map(|&i| labels.values[i]).collect();
        Ok(LocalizerExample { inputs, targets })
    }
}

/// Loss and optimizer trajectory of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizerHistory {
    /// Mean per-video MSE seen during each epoch.
    pub epoch_losses: Vec<f64>,
    pub optimizer: AdamState,
}

/// Adam on the mean per-video MSE over shuffled mini-batches.
pub fn train_localizer(
    model: &mut LocalizerModel,
    examples: &[LocalizerExample],
    cfg: &LocalizerTrainConfig,
    seed: u64,
) -> Result<LocalizerHistory> {
    if examples.is_empty() {
        return config_err("cannot train the localizer on an empty dataset");
    }
    if cfg.batch_size == 0 || cfg.lr <= 0.0 {
        return config_err("localizer batch size and learning rate must be positive");
    }
    let mut state = AdamState::new(cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(seed, rng::SHUFFLE, epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Option<Vec<Tensor>> = None;
            for &i in batch {
                let ex = &examples[i];
                let (loss, g) = model.loss_and_grads(&ex.inputs, &ex.targets)?;
                total += loss;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => accumulate(acc, &g)?,
                }
            }
            let mut grads = grads.expect("batches are non-empty");
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale(scale));
            apply_adam(model, &grads, &mut state)?;
        }
        let mean = total / examples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!(
                "localizer loss diverged in epoch {}",
                epoch + 1
            )));
        }
        epoch_losses.push(mean);
    }
    Ok(LocalizerHistory {
        epoch_losses,
        optimizer: state,
    })
}

/// Predicted and labelled key-frame of one video.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyframePrediction {
    pub video_id: String,
    pub predicted: usize,
    pub label: usize,
}

impl KeyframePrediction {
    pub fn distance(&self) -> usize {
        self.predicted.abs_diff(self.label)
    }
}

pub fn predict_all(
    model: &LocalizerModel,
    videos: &[VideoSample],
) -> Result<Vec<KeyframePrediction>> {
    videos
        .iter()
        .map(|v| {
            Ok(KeyframePrediction {
                video_id: v.id.clone(),
                predicted: predict_keyframe(model, v)?,
                label: v.key_frame_index,
            })
        })
        .collect()
}

pub fn write_predictions_csv<W: Write>(
    mut out: W,
    rows: &[KeyframePrediction],
) -> std::io::Result<()> {
    writeln!(out, "video_id,predicted,label,distance")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.video_id,
            r.predicted,
            r.label,
            r.distance()
        )?;
    }
    Ok(())
}

pub fn write_accuracy_csv<W: Write>(mut out: W, curve: &[(usize, f64)]) -> std::io::Result<()> {
    writeln!(out, "tolerance,accuracy")?;
    for (d, a) in curve {
        writeln!(out, "{d},{a}")?;
    }
    Ok(())
}
