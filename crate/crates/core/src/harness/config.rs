//! Flat JSON experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierConfig, ClassifierTrainConfig, ClipSampling};
use crate::data::SynthConfig;
use crate::error::{config_err, Error, Result};
use crate::localizer::{LocalizerConfig, LocalizerTrainConfig};

/// Where the classifier's clip centre comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeyFrameSource {
    #[serde(rename = "gt", alias = "ground_truth")]
    GroundTruth,
    #[serde(rename = "predicted")]
    Predicted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

/// Classifier layer geometry preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    /// 112x112 crops, 16/32/64/64 channels.
    Canonical,
    /// 28x28 crops with fewer channels, for desk-scale synthetic runs.
    Compact,
    /// Tiny variant used by the gradient checks.
    Reduced,
}

/// Every knob of an experiment. Unknown keys are rejected; missing keys take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub precision: Precision,

    pub synth_videos: usize,
    pub synth_frames: usize,
    pub synth_width: usize,
    pub synth_height: usize,
    pub synth_malignant_fraction: f64,
    pub synth_miss_rate: f64,
    pub synth_feature_noise: f64,

    /// Share of videos used for training by the single-split commands.
    pub train_fraction: f64,

    pub loc_lr: f64,
    pub loc_batch_size: usize,
    pub loc_epochs: usize,
    pub loc_embed_dim: usize,
    pub loc_hidden_dim: usize,
    pub loc_head_dim: usize,

    pub clip_len: usize,
    pub geometry: Geometry,
    pub dropout: f64,
    pub cls_lr: f64,
    pub cls_lr_late: f64,
    pub cls_weight_decay: f64,
    pub cls_batch_size: usize,
    pub cls_epochs: usize,
    pub cls_epochs_late: usize,
    pub augment: bool,
    pub folds: usize,
    pub key_frame_source: KeyFrameSource,

    pub sampling: ClipSampling,
    pub spp: bool,
    pub attention: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            precision: Precision::F64,
            synth_videos: 300,
            synth_frames: 96,
            synth_width: 128,
            synth_height: 128,
            synth_malignant_fraction: 0.5,
            synth_miss_rate: 0.02,
            synth_feature_noise: 0.01,
            train_fraction: 0.8,
            loc_lr: 0.01,
            loc_batch_size: 64,
            loc_epochs: 20,
            loc_embed_dim: 256,
            loc_hidden_dim: 256,
            loc_head_dim: 64,
            clip_len: 32,
            geometry: Geometry::Canonical,
            dropout: 0.5,
            cls_lr: 1e-3,
            cls_lr_late: 1e-4,
            cls_weight_decay: 1e-8,
            cls_batch_size: 16,
            cls_epochs: 20,
            cls_epochs_late: 20,
            augment: true,
            folds: 5,
            key_frame_source: KeyFrameSource::GroundTruth,
            sampling: ClipSampling::KeyFrame,
            spp: true,
            attention: true,
        }
    }
}

/// Contents of `run.json`: the command plus its fully resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub command: String,
    pub config: ExperimentConfig,
}

impl ExperimentConfig {
    /// Reads a config file. A `run.json` is accepted too; its embedded config is used.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let is_run = value.get("command").is_some() && value.get("config").is_some();
        let cfg = if is_run {
            serde_json::from_value::<RunRecord>(value)?.config
        } else {
            serde_json::from_value(value)?
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.precision == Precision::F32 {
            return config_err("only 64-bit precision is implemented; use --precision f64");
        }
        let positive_f = [
            ("synth_malignant_fraction", self.synth_malignant_fraction),
            ("train_fraction", self.train_fraction),
            ("loc_lr", self.loc_lr),
            ("cls_lr", self.cls_lr),
            ("cls_lr_late", self.cls_lr_late),
            ("cls_weight_decay", self.cls_weight_decay),
        ];
        for (name, v) in positive_f {
            if !(v.is_finite() && v > 0.0) {
                return config_err(format!("{name} must be positive, got {v}"));
            }
        }
        let positive_u = [
            ("synth_videos", self.synth_videos),
            ("synth_frames", self.synth_frames),
            ("synth_width", self.synth_width),
            ("synth_height", self.synth_height),
            ("loc_batch_size", self.loc_batch_size),
            ("loc_epochs", self.loc_epochs),
            ("loc_embed_dim", self.loc_embed_dim),
            ("loc_hidden_dim", self.loc_hidden_dim),
            ("loc_head_dim", self.loc_head_dim),
            ("clip_len", self.clip_len),
            ("cls_batch_size", self.cls_batch_size),
            ("cls_epochs", self.cls_epochs),
            ("cls_epochs_late", self.cls_epochs_late),
        ];
        for (name, v) in positive_u {
            if v == 0 {
                return config_err(format!("{name} must be positive"));
            }
        }
        if !self.clip_len.is_multiple_of(2) {
            return config_err(format!("clip_len must be even, got {}", self.clip_len));
        }
        if self.folds < 2 {
            return config_err(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.synth_malignant_fraction > 1.0 || self.train_fraction >= 1.0 {
            return config_err("synth_malignant_fraction must be <= 1 and train_fraction < 1");
        }
        if !(0.0..=1.0).contains(&self.synth_miss_rate) || !(0.0..1.0).contains(&self.dropout) {
            return config_err("synth_miss_rate must lie in [0, 1] and dropout in [0, 1)");
        }
        if self.synth_feature_noise.is_nan() || self.synth_feature_noise < 0.0 {
            return config_err("synth_feature_noise must be non-negative");
        }
        self.classifier_config().trace()?;
        self.synth_config().validate()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            videos: self.synth_videos,
            frames: self.synth_frames,
            width: self.synth_width,
            height: self.synth_height,
            malignant_fraction: self.synth_malignant_fraction,
            miss_rate: self.synth_miss_rate,
            feature_noise: self.synth_feature_noise,
            clip_len: self.clip_len,
        }
    }

    pub fn localizer_config(&self) -> LocalizerConfig {
        LocalizerConfig {
            feature_dim: crate::data::FEATURE_DIM,
            embed_dim: self.loc_embed_dim,
            hidden_dim: self.loc_hidden_dim,
            head_dim: self.loc_head_dim,
        }
    }

    pub fn localizer_train_config(&self) -> LocalizerTrainConfig {
        LocalizerTrainConfig {
            lr: self.loc_lr,
            batch_size: self.loc_batch_size,
            epochs: self.loc_epochs,
            weight_decay: 0.0,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        let base = match self.geometry {
            Geometry::Canonical => ClassifierConfig::canonical(),
            Geometry::Compact => ClassifierConfig::compact(),
            Geometry::Reduced => ClassifierConfig::reduced(),
        };
        ClassifierConfig {
            clip_len: self.clip_len,
            dropout: self.dropout,
            spp: self.spp,
            attention: self.attention,
            ..base
        }
    }

    pub fn classifier_train_config(&self) -> ClassifierTrainConfig {
        ClassifierTrainConfig {
            lr: self.cls_lr,
            lr_late: self.cls_lr_late,
            epochs: self.cls_epochs,
            epochs_late: self.cls_epochs_late,
            weight_decay: self.cls_weight_decay,
            batch_size: self.cls_batch_size,
            augment: self.augment,
        }
    }
}
