//! Python bindings: synthetic data, similarity measures, both models and the experiment commands.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use kfgnet::classifier::{
    prepare_samples, train_classifier, ClassificationMetrics, ClassifierConfig, ClassifierModel,
    ClassifierTrainConfig, ClipSampling,
};
use kfgnet::data::{self, GrayFrame, Roi, SynthConfig, VideoSample};
use kfgnet::harness::{self, checkpoint, Command, ExperimentConfig};
use kfgnet::localizer::{
    self, accuracy_at_tolerance, LocalizerConfig, LocalizerExample, LocalizerModel,
    LocalizerTrainConfig,
};
use kfgnet::{similarity, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Shape(_) | Error::Data(_) | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io { .. } | Error::Format { .. } | Error::Version { .. } => {
            PyIOError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn frame_from_rows(rows: Vec<Vec<f64>>) -> PyResult<GrayFrame> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if h == 0 || w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err(
            "frame must be a non-empty rectangular list of rows",
        ));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    GrayFrame::from_unit(w, h, &flat).map_err(py_err)
}

/// One ultrasound video with its per-frame detections.
#[pyclass(name = "Video", module = "pykfgnet", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyVideo {
    inner: VideoSample,
}

#[pymethods]
impl PyVideo {
    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    /// 0 benign, 1 malignant.
    #[getter]
    fn label(&self) -> u8 {
        self.inner.label as u8
    }

    #[getter]
    fn key_frame_index(&self) -> usize {
        self.inner.key_frame_index
    }

    #[getter]
    fn n_frames(&self) -> usize {
        self.inner.n_frames()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    /// Frame `i` as rows of intensities in [0, 1].
    fn frame(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        let f = self
            .inner
            .frames
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("frame {i} out of range")))?;
        Ok(f.to_unit().chunks(f.width).map(<[f64]>::to_vec).collect())
    }

    /// `(x1, y1, x2, y2)` of the detection in frame `i`, if any.
    fn roi(&self, i: usize) -> Option<(u32, u32, u32, u32)> {
        self.inner
            .rois
            .get(i)
            .copied()
            .flatten()
            .map(|r| (r.x1, r.y1, r.x2, r.y2))
    }

    fn detected_frames(&self) -> Vec<usize> {
        self.inner.detected_frames()
    }

    /// Similarity-derived key-frame score per frame.
    fn score_labels(&self) -> PyResult<Vec<f64>> {
        Ok(similarity::generate_score_labels(&self.inner)
            .map_err(py_err)?
            .values)
    }

    /// Motion index per frame (mean similarity to the neighbours at offsets 1 and 2).
    fn motion_index(&self) -> PyResult<Vec<f64>> {
        similarity::motion_index(&self.inner.frames).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Video(id={:?}, label={}, frames={}, key_frame_index={})",
            self.inner.id,
            self.inner.label as u8,
            self.inner.n_frames(),
            self.inner.key_frame_index
        )
    }
}

fn unwrap_videos(videos: &[PyRef<'_, PyVideo>]) -> Vec<VideoSample> {
    videos.iter().map(|v| v.inner.clone()).collect()
}

#[pyfunction]
#[pyo3(signature = (seed, videos=10, frames=96, width=128, height=128, malignant_fraction=0.5, miss_rate=0.02, feature_noise=0.01, clip_len=32))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic(
    seed: u64,
    videos: usize,
    frames: usize,
    width: usize,
    height: usize,
    malignant_fraction: f64,
    miss_rate: f64,
    feature_noise: f64,
    clip_len: usize,
) -> PyResult<Vec<PyVideo>> {
    let cfg = SynthConfig {
        videos,
        frames,
        width,
        height,
        malignant_fraction,
        miss_rate,
        feature_noise,
        clip_len,
    };
    let out = data::generate_synthetic(&cfg, seed).map_err(py_err)?;
    Ok(out.into_iter().map(|inner| PyVideo { inner }).collect())
}

/// Writes the manifest and containers; returns the manifest path.
#[pyfunction]
fn write_dataset(dir: PathBuf, videos: Vec<PyRef<'_, PyVideo>>) -> PyResult<PathBuf> {
    data::write_dataset(&dir, &unwrap_videos(&videos)).map_err(py_err)
}

#[pyfunction]
fn load_dataset(manifest: PathBuf) -> PyResult<Vec<PyVideo>> {
    let v = data::load_dataset(&manifest).map_err(py_err)?;
    Ok(v.into_iter().map(|inner| PyVideo { inner }).collect())
}

#[pyfunction]
fn dataset_digest(dir: PathBuf) -> PyResult<String> {
    data::dataset_digest(&dir).map_err(py_err)
}

#[pyfunction]
fn iou(a: (u32, u32, u32, u32), b: (u32, u32, u32, u32)) -> f64 {
    similarity::iou(&Roi::new(a.0, a.1, a.2, a.3), &Roi::new(b.0, b.1, b.2, b.3))
}

/// Global SSIM of two equally sized frames given as rows of intensities in [0, 1].
#[pyfunction]
fn ssim(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    similarity::ssim(&frame_from_rows(a)?, &frame_from_rows(b)?).map_err(py_err)
}

#[pyfunction]
fn hist_similarity(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    similarity::hist_similarity(&frame_from_rows(a)?, &frame_from_rows(b)?).map_err(py_err)
}

/// `1 - cos(v_temp, v_motion)`.
#[pyfunction]
fn cosine_consistency_loss(v_temp: Vec<f64>, v_motion: Vec<f64>) -> PyResult<f64> {
    kfgnet::kernels::cosine_consistency_loss(&v_temp, &v_motion).map_err(py_err)
}

#[pyfunction]
#[pyo3(name = "accuracy_at_tolerance")]
fn py_accuracy_at_tolerance(
    predictions: Vec<usize>,
    labels: Vec<usize>,
    tolerance: usize,
) -> PyResult<f64> {
    accuracy_at_tolerance(&predictions, &labels, tolerance).map_err(py_err)
}

/// Accuracy, sensitivity, specificity, precision and F1 from confusion counts.
#[pyfunction]
#[pyo3(name = "classification_metrics")]
fn py_classification_metrics<'py>(
    py: Python<'py>,
    tp: usize,
    fp: usize,
    tn: usize,
    fn_: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let m = ClassificationMetrics::from_counts(tp, fp, tn, fn_);
    let d = PyDict::new(py);
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("sensitivity", m.sensitivity)?;
    d.set_item("specificity", m.specificity)?;
    d.set_item("precision", m.precision)?;
    d.set_item("f1", m.f1)?;
    d.set_item("undefined", m.undefined)?;
    Ok(d)
}

/// LSTM key-frame localizer.
#[pyclass(name = "Localizer", module = "pykfgnet")]
struct PyLocalizer {
    inner: LocalizerModel,
}

#[pymethods]
impl PyLocalizer {
    #[new]
    #[pyo3(signature = (seed=7, embed_dim=256, hidden_dim=256, head_dim=64))]
    fn new(seed: u64, embed_dim: usize, hidden_dim: usize, head_dim: usize) -> Self {
        let cfg = LocalizerConfig {
            embed_dim,
            hidden_dim,
            head_dim,
            ..LocalizerConfig::default()
        };
        PyLocalizer {
            inner: LocalizerModel::new(cfg, seed),
        }
    }

    /// Trains on the videos' score labels; returns the per-epoch mean loss.
    #[pyo3(signature = (videos, epochs=20, lr=0.01, batch_size=64, seed=7))]
    fn train(
        &mut self,
        videos: Vec<PyRef<'_, PyVideo>>,
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let examples = videos
            .iter()
            .map(|v| LocalizerExample::from_video(&v.inner))
            .collect::<kfgnet::Result<Vec<_>>>()
            .map_err(py_err)?;
        let cfg = LocalizerTrainConfig {
            lr,
            batch_size,
            epochs,
            weight_decay: 0.0,
        };
        let h =
            localizer::train_localizer(&mut self.inner, &examples, &cfg, seed).map_err(py_err)?;
        Ok(h.epoch_losses)
    }

    /// Key-frame score for every frame (zero where nothing was detected).
    fn scores(&self, video: PyRef<'_, PyVideo>) -> PyResult<Vec<f64>> {
        Ok(localizer::localizer_forward(&self.inner, &video.inner)
            .map_err(py_err)?
            .values)
    }

    fn predict(&self, video: PyRef<'_, PyVideo>) -> PyResult<usize> {
        localizer::predict_keyframe(&self.inner, &video.inner).map_err(py_err)
    }

    fn param_count(&self) -> usize {
        kfgnet::params::Parameters::param_count(&self.inner)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save_localizer(&path, &self.inner, None).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = checkpoint::load_checkpoint(&path)
            .and_then(|c| c.into_localizer())
            .map_err(py_err)?;
        Ok(PyLocalizer { inner })
    }
}

fn parse_sampling(s: &str) -> PyResult<ClipSampling> {
    match s {
        "keyframe" => Ok(ClipSampling::KeyFrame),
        "uniform" => Ok(ClipSampling::Uniform),
        _ => Err(PyValueError::new_err(format!(
            "sampling must be 'keyframe' or 'uniform', got {s:?}"
        ))),
    }
}

/// Lightweight 3-D CNN clip classifier.
#[pyclass(name = "Classifier", module = "pykfgnet")]
struct PyClassifier {
    inner: ClassifierModel,
}

#[pymethods]
impl PyClassifier {
    #[new]
    #[pyo3(signature = (geometry="compact", seed=7, attention=true, spp=true))]
    fn new(geometry: &str, seed: u64, attention: bool, spp: bool) -> PyResult<Self> {
        let base = match geometry {
            "canonical" => ClassifierConfig::canonical(),
            "compact" => ClassifierConfig::compact(),
            "reduced" => ClassifierConfig::reduced(),
            g => return Err(PyValueError::new_err(format!("unknown geometry {g:?}"))),
        };
        let cfg = ClassifierConfig {
            attention,
            spp,
            ..base
        };
        Ok(PyClassifier {
            inner: ClassifierModel::new(cfg, seed, 0).map_err(py_err)?,
        })
    }

    /// Layer output shapes for one clip.
    fn shape_trace<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let t = self.inner.trace().map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("conv", t.conv.to_vec())?;
        d.set_item("pool1", t.pool1.to_vec())?;
        d.set_item("pool2", t.pool2.to_vec())?;
        d.set_item("attention_sides", t.attention_sides.to_vec())?;
        d.set_item("temporal_windows", t.temporal_windows)?;
        d.set_item("head_len", t.head_len)?;
        Ok(d)
    }

    /// Two-stage schedule; returns `(l_cls, l_motion, total)` per epoch.
    #[pyo3(signature = (videos, epochs=20, epochs_late=20, sampling="keyframe", seed=7))]
    fn train(
        &mut self,
        videos: Vec<PyRef<'_, PyVideo>>,
        epochs: usize,
        epochs_late: usize,
        sampling: &str,
        seed: u64,
    ) -> PyResult<Vec<(f64, f64, f64)>> {
        let vids = unwrap_videos(&videos);
        let keys: Vec<usize> = vids.iter().map(|v| v.key_frame_index).collect();
        let samples = prepare_samples(&vids, &keys, parse_sampling(sampling)?, &self.inner.config)
            .map_err(py_err)?;
        let cfg = ClassifierTrainConfig {
            epochs,
            epochs_late,
            ..ClassifierTrainConfig::default()
        };
        let h = train_classifier(&mut self.inner, &samples, &cfg, seed, 0).map_err(py_err)?;
        Ok(h.epochs
            .iter()
            .map(|e| (e.loss.l_cls, e.loss.l_motion, e.loss.total))
            .collect())
    }

    /// Malignancy probability per video; clips are centred on `key_frames` (ground truth when omitted).
    #[pyo3(signature = (videos, key_frames=None, sampling="keyframe"))]
    fn predict(
        &self,
        videos: Vec<PyRef<'_, PyVideo>>,
        key_frames: Option<Vec<usize>>,
        sampling: &str,
    ) -> PyResult<Vec<f64>> {
        let vids = unwrap_videos(&videos);
        let keys = key_frames.unwrap_or_else(|| vids.iter().map(|v| v.key_frame_index).collect());
        let samples = prepare_samples(&vids, &keys, parse_sampling(sampling)?, &self.inner.config)
            .map_err(py_err)?;
        let eval = kfgnet::classifier::evaluate(&self.inner, &samples).map_err(py_err)?;
        Ok(eval.predictions.into_iter().map(|p| p.1).collect())
    }

    fn param_count(&self) -> usize {
        kfgnet::params::Parameters::param_count(&self.inner)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save_classifier(&path, &self.inner, None).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = checkpoint::load_checkpoint(&path)
            .and_then(|c| c.into_classifier())
            .map_err(py_err)?;
        Ok(PyClassifier { inner })
    }
}

/// Runs a CLI command with a JSON config (same schema as `--config`); returns its message.
#[pyfunction]
#[pyo3(signature = (command, config_json="{}"))]
fn run_command(command: &str, config_json: &str) -> PyResult<String> {
    let cmd = Command::from_name(command)
        .ok_or_else(|| PyValueError::new_err(format!("unknown command {command:?}")))?;
    let cfg: ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(harness::run(cmd, &cfg).map_err(py_err)?.message)
}

#[pymodule]
fn pykfgnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVideo>()?;
    m.add_class::<PyLocalizer>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(write_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_digest, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(hist_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_consistency_loss, m)?)?;
    m.add_function(wrap_pyfunction!(py_accuracy_at_tolerance, m)?)?;
    m.add_function(wrap_pyfunction!(py_classification_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    Ok(())
}
