//! Video samples, on-disk containers, synthetic generation and clip extraction.

pub mod augment;
pub mod clip;
pub mod container;
pub mod crop;
pub mod folds;
pub mod synth;

pub use augment::{augment, augment_with};
pub use clip::{
    extract_keyframe_window, extract_uniform_clip, keyframe_window_indices, uniform_indices, Clip,
};
pub use container::{dataset_digest, load_dataset, write_dataset};
pub use crop::crop_and_resize;
pub use folds::{holdout_split, kfold_split, FoldSplit, HoldoutSplit};
pub use synth::{generate_synthetic, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of each per-detection appearance feature vector.
pub const FEATURE_DIM: usize = 256;

/// Axis-aligned box in pixel coordinates, `[x1, x2) x [y1, y2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Roi {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl Roi {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Self {
        Roi { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    /// Checks `0 <= x1 < x2 <= width` and `0 <= y1 < y2 <= height`.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.x1 < self.x2
            && self.y1 < self.y2
            && self.x2 as usize <= width
            && self.y2 as usize <= height
        {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "roi {self:?} outside a {width}x{height} frame"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign = 0,
    Malignant = 1,
}

impl Label {
    pub fn from_index(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Benign),
            1 => Ok(Label::Malignant),
            _ => Err(Error::Data(format!("label must be 0 or 1, got {v}"))),
        }
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

/// 8-bit grayscale frame; intensities read back scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height || width == 0 || height == 0 {
            return Err(Error::Data(format!(
                "frame of {width}x{height} given {} pixels",
                pixels.len()
            )));
        }
        Ok(GrayFrame {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayFrame {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// Quantises `[0, 1]` intensities (clamped) to 8 bits.
    pub fn from_unit(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let pixels = values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        GrayFrame::new(width, height, pixels)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x] as f64 / 255.0
    }

    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }
}

/// One ultrasound video with its per-frame detections and annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub frames: Vec<GrayFrame>,
    /// Detected nodule box per frame; `None` means no detection.
    pub rois: Vec<Option<Roi>>,
    /// Appearance feature per detected frame, aligned with `rois`.
    pub features: Vec<Option<Vec<f64>>>,
    pub key_frame_index: usize,
    pub label: Label,
}

impl VideoSample {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.width)
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.height)
    }

    pub fn key_roi(&self) -> Result<Roi> {
        self.rois
            .get(self.key_frame_index)
            .copied()
            .flatten()
            .ok_or_else(|| {
                Error::Data(format!(
                    "video {}: key-frame {} has no roi",
                    self.id, self.key_frame_index
                ))
            })
    }

    /// Indices of frames with a detection, in temporal order.
    pub fn detected_frames(&self) -> Vec<usize> {
        self.rois
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.map(|_| i))
            .collect()
    }

    /// Checks every sample invariant; errors name the video and the offending frame.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_frames();
        let bad = |msg: String| Err(Error::Data(format!("video {}: {msg}", self.id)));
        if n == 0 {
            return bad("no frames".into());
        }
        if self.rois.len() != n || self.features.len() != n {
            return bad(format!(
                "{} frames but {} roi slots and {} feature slots",
                n,
                self.rois.len(),
                self.features.len()
            ));
        }
        let (w, h) = (self.width(), self.height());
        for (i, f) in self.frames.iter().enumerate() {
            if f.width != w || f.height != h {
                return bad(format!(
                    "frame {i} is {}x{}, expected {w}x{h}",
                    f.width, f.height
                ));
            }
        }
        if self.key_frame_index >= n {
            return bad(format!(
                "key_frame_index {} out of range for {n} frames",
                self.key_frame_index
            ));
        }
        for (i, roi) in self.rois.iter().enumerate() {
            if let Some(r) = roi {
                if r.validate(w, h).is_err() {
                    return bad(format!("frame {i}: roi {r:?} out of bounds for {w}x{h}"));
                }
            }
        }
        if self.rois[self.key_frame_index].is_none() {
            return bad(format!("key-frame {} has no roi", self.key_frame_index));
        }
        let any_features = self.features.iter().any(Option::is_some);
        for (i, (r, f)) in self.rois.iter().zip(&self.features).enumerate() {
            if any_features && r.is_some() != f.is_some() {
                return bad(format!("frame {i}: roi and feature presence disagree"));
            }
            if let Some(f) = f {
                if f.len() != FEATURE_DIM {
                    return bad(format!(
                        "frame {i}: feature length {} != {FEATURE_DIM}",
                        f.len()
                    ));
                }
            }
        }
        Ok(())
    }
}
