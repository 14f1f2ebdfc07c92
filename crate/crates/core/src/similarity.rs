//! Frame, box and feature similarity: score-label generation for key-frame
//! supervision, and the motion index that drives the attention target.

use std::io::Write;

use crate::data::{GrayFrame, Roi, VideoSample};
use crate::error::{config_err, Error, Result};

/// SSIM stabilisers for intensities in `[0, 1]`.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Per-frame values in `[0, 1]`: generated score labels or localizer outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSequence {
    pub values: Vec<f64>,
}

impl ScoreSequence {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::NonFinite(format!(
                "score {v} at frame {i} is outside [0, 1]"
            )));
        }
        Ok(ScoreSequence { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_indexed_csv(out, &self.values)
    }
}

/// Motion index per frame and its average per temporal window.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionVector {
    pub per_frame: Vec<f64>,
    pub windowed: Vec<f64>,
}

impl MotionVector {
    /// Motion target for a clip: the video's per-frame index gathered at the
    /// clip's source frames, then averaged into `windows` windows.
    pub fn for_clip(video_index: &[f64], source_indices: &[usize], windows: usize) -> Result<Self> {
        let per_frame = source_indices
            .iter()
            .map(|&i| {
                video_index.get(i).copied().ok_or_else(|| {
                    Error::Config(format!(
                        "clip frame {i} beyond motion index of {}",
                        video_index.len()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let windowed = motion_vector(&per_frame, windows)?;
        Ok(MotionVector {
            per_frame,
            windowed,
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_indexed_csv(out, &self.windowed)
    }
}

fn write_indexed_csv<W: Write>(mut out: W, values: &[f64]) -> std::io::Result<()> {
    writeln!(out, "frame_index,value")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{i},{v}")?;
    }
    Ok(())
}

pub fn iou(a: &Roi, b: &Roi) -> f64 {
    let iw = a.x2.min(b.x2).saturating_sub(a.x1.max(b.x1)) as u64;
    let ih = a.y2.min(b.y2).saturating_sub(a.y1.max(b.y1)) as u64;
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// `1 - d_i / max_j d_j` for Euclidean distances to the key-frame's feature;
/// frames without a feature score 0.
pub fn feature_similarity(features: &[Option<Vec<f64>>], key: usize) -> Result<Vec<f64>> {
    let key_feat = features
        .get(key)
        .and_then(Option::as_ref)
        .ok_or_else(|| Error::Data(format!("key-frame {key} has no feature vector")))?;
    let dists: Vec<Option<f64>> = features
        .iter()
        .map(|f| {
            f.as_ref().map(|f| {
                f.iter()
                    .zip(key_feat)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
        })
        .collect();
    let max = dists.iter().flatten().fold(0.0f64, |m, &d| m.max(d));
    Ok(dists
        .into_iter()
        .map(|d| match d {
            None => 0.0,
            Some(_) if max == 0.0 => 1.0,
            Some(d) => 1.0 - d / max,
        })
        .collect())
}

/// `1 - |i - k| / max(1, max_j |j - k|)`.
pub fn index_similarity(n: usize, key: usize) -> Vec<f64> {
    let far = key.max(n.saturating_sub(1).saturating_sub(key)).max(1) as f64;
    (0..n).map(|i| 1.0 - i.abs_diff(key) as f64 / far).collect()
}

/// Mean of feature, index and box-overlap similarity to the key-frame, with the
/// key-frame itself pinned to 1.
pub fn generate_score_labels(video: &VideoSample) -> Result<ScoreSequence> {
    let k = video.key_frame_index;
    let key_roi = video.key_roi()?;
    let feat = feature_similarity(&video.features, k)
        .map_err(|e| Error::Data(format!("video {}: {e}", video.id)))?;
    let index = index_similarity(video.n_frames(), k);
    let values = (0..video.n_frames())
        .map(|i| {
            if i == k {
                1.0
            } else {
                let overlap = video.rois[i].map_or(0.0, |r| iou(&r, &key_roi));
                ((feat[i] + index[i] + overlap) / 3.0).clamp(0.0, 1.0)
            }
        })
        .collect();
    ScoreSequence::new(values)
}

/// Per-frame moments reused across every SSIM pair.
struct FrameStats {
    mean: f64,
    var: f64,
    unit: Vec<f64>,
    hist: [f64; 256],
}

impl FrameStats {
    fn new(frame: &GrayFrame) -> Self {
        let unit = frame.to_unit();
        let n = unit.len() as f64;
        let mean = unit.iter().sum::<f64>() / n;
        let var = unit.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        FrameStats {
            mean,
            var,
            unit,
            hist: histogram(frame),
        }
    }
}

fn ssim_from(a: &FrameStats, b: &FrameStats) -> f64 {
    let n = a.unit.len() as f64;
    let cov = a
        .unit
        .iter()
        .zip(&b.unit)
        .map(|(x, y)| (x - a.mean) * (y - b.mean))
        .sum::<f64>()
        / n;
    let num = (2.0 * a.mean * b.mean + SSIM_C1) * (2.0 * cov + SSIM_C2);
    let den = (a.mean * a.mean + b.mean * b.mean + SSIM_C1) * (a.var + b.var + SSIM_C2);
    (num / den).clamp(0.0, 1.0)
}

fn check_same_size(a: &GrayFrame, b: &GrayFrame) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return config_err(format!(
            "frames differ in size: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        ));
    }
    Ok(())
}

/// Whole-frame SSIM clamped to `[0, 1]`.
pub fn ssim(a: &GrayFrame, b: &GrayFrame) -> Result<f64> {
    check_same_size(a, b)?;
    Ok(ssim_from(&FrameStats::new(a), &FrameStats::new(b)))
}

fn histogram(frame: &GrayFrame) -> [f64; 256] {
    let mut h = [0.0; 256];
    for &p in &frame.pixels {
        h[p as usize] += 1.0;
    }
    let n = frame.pixels.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

fn intersection(a: &[f64; 256], b: &[f64; 256]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.min(*y))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Intersection of normalised 256-bin intensity histograms.
pub fn hist_similarity(a: &GrayFrame, b: &GrayFrame) -> Result<f64> {
    Ok(intersection(&histogram(a), &histogram(b)))
}

/// `M_i`: mean of `(ssim + hist_similarity) / 2` over the neighbours
/// `i-2, i-1, i+1, i+2` that exist.
pub fn motion_index(frames: &[GrayFrame]) -> Result<Vec<f64>> {
    let n = frames.len();
    if n < 2 {
        return config_err(format!("motion index needs at least 2 frames, got {n}"));
    }
    for f in &frames[1..] {
        check_same_size(&frames[0], f)?;
    }
    let stats: Vec<FrameStats> = frames.iter().map(FrameStats::new).collect();
    let pair = |i: usize, j: usize| {
        (ssim_from(&stats[i], &stats[j]) + intersection(&stats[i].hist, &stats[j].hist)) / 2.0
    };
    // pairwise values for offsets 1 and 2, each computed once
    let near: Vec<f64> = (0..n - 1).map(|i| pair(i, i + 1)).collect();
    let far: Vec<f64> = (0..n.saturating_sub(2)).map(|i| pair(i, i + 2)).collect();
    Ok((0..n)
        .map(|i| {
            let mut sum = 0.0;
            let mut count = 0usize;
            if i >= 2 {
                sum += far[i - 2];
                count += 1;
            }
            if i >= 1 {
                sum += near[i - 1];
                count += 1;
            }
            if i + 1 < n {
                sum += near[i];
                count += 1;
            }
            if i + 2 < n {
                sum += far[i];
                count += 1;
            }
            sum / count as f64
        })
        .collect())
}

/// Bounds of window `w` of `windows` over `len` frames.
pub fn window_bounds(len: usize, windows: usize, w: usize) -> (usize, usize) {
    (w * len / windows, (w + 1) * len / windows)
}

/// Averages per-frame motion into `windows` contiguous windows.
pub fn motion_vector(per_frame: &[f64], windows: usize) -> Result<Vec<f64>> {
    let len = per_frame.len();
    if windows == 0 || len < windows {
        return config_err(format!("cannot split {len} frames into {windows} windows"));
    }
    Ok((0..windows)
        .map(|w| {
            let (lo, hi) = window_bounds(len, windows, w);
            per_frame[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect())
}
