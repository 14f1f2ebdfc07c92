//! Fixed-length clip extraction around a key-frame, or uniformly over a video.

use super::crop::crop_and_resize;
use super::{Roi, VideoSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A `[1, T, S, S]` intensity volume cut from one video.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub voxels: Tensor,
    /// Source frame for every clip slot (repeats mark edge replication).
    pub source_indices: Vec<usize>,
    /// Half-open range of distinct source frames covered.
    pub source_range: (usize, usize),
}

impl Clip {
    pub fn len(&self) -> usize {
        self.source_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_indices.is_empty()
    }

    pub fn side(&self) -> usize {
        self.voxels.shape()[2]
    }
}

/// Source frame for each of `t` slots around key-frame `k` in an `n`-frame video.
///
/// The window `[k - t/2, k + t/2)` is shifted to stay inside the video. When
/// `n < t` every real frame is used once, placed so the key-frame sits as close
/// to slot `t/2` as possible, and the leftover slots replicate the edge frames.
pub fn keyframe_window_indices(n: usize, k: usize, t: usize) -> Vec<usize> {
    assert!(n >= 1 && k < n && t >= 1);
    let (n, k, t) = (n as i64, k as i64, t as i64);
    let lo = (t - n).min(0);
    let hi = (t - n).max(0);
    // offset of frame 0 within the clip
    let offset = (t / 2 - k).clamp(lo, hi);
    (0..t)
        .map(|s| (s - offset).clamp(0, n - 1) as usize)
        .collect()
}

/// `t` frame indices spread evenly over an `n`-frame video (slot centres).
pub fn uniform_indices(n: usize, t: usize) -> Vec<usize> {
    (0..t)
        .map(|s| ((2 * s + 1) * n / (2 * t)).min(n - 1))
        .collect()
}

fn build_clip(
    video: &VideoSample,
    indices: Vec<usize>,
    size: usize,
    roi_for: impl Fn(usize) -> Result<Roi>,
) -> Result<Clip> {
    let t = indices.len();
    let mut data = Vec::with_capacity(t * size * size);
    for &i in &indices {
        let roi = roi_for(i)?;
        data.extend(crop_and_resize(&video.frames[i], &roi, size)?);
    }
    let lo = *indices.iter().min().unwrap();
    let hi = *indices.iter().max().unwrap() + 1;
    Ok(Clip {
        voxels: Tensor::new(vec![1, t, size, size], data)?,
        source_indices: indices,
        source_range: (lo, hi),
    })
}

/// Clip of `t` frames centred on `key_frame`, each cropped to its own ROI (or the
/// key-frame's ROI where the frame has no detection) and resized to `size x size`.
pub fn extract_keyframe_window(
    video: &VideoSample,
    key_frame: usize,
    t: usize,
    size: usize,
) -> Result<Clip> {
    let n = video.n_frames();
    if key_frame >= n || n == 0 {
        return Err(Error::Data(format!(
            "video {}: key-frame {key_frame} out of range",
            video.id
        )));
    }
    let key_roi = video.rois[key_frame]
        .ok_or_else(|| Error::Data(format!("video {}: frame {key_frame} has no roi", video.id)))?;
    let indices = keyframe_window_indices(n, key_frame, t);
    build_clip(video, indices, size, |i| {
        Ok(video.rois[i].unwrap_or(key_roi))
    })
}

/// Clip of `t` frames sampled evenly over the whole video. Frames without a
/// detection borrow the ROI of the nearest detected frame.
pub fn extract_uniform_clip(video: &VideoSample, t: usize, size: usize) -> Result<Clip> {
    let detected = video.detected_frames();
    if detected.is_empty() {
        return Err(Error::Data(format!("video {}: no detections", video.id)));
    }
    let indices = uniform_indices(video.n_frames(), t);
    build_clip(video, indices, size, |i| {
        let nearest = detected
            .iter()
            .min_by_key(|&&d| (d as i64 - i as i64).abs())
            .copied()
            .unwrap();
        Ok(video.rois[nearest].unwrap())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centred_and_shifted_windows() {
        assert_eq!(
            keyframe_window_indices(96, 48, 32),
            (32..64).collect::<Vec<_>>()
        );
        assert_eq!(
            keyframe_window_indices(96, 5, 32),
            (0..32).collect::<Vec<_>>()
        );
        assert_eq!(
            keyframe_window_indices(96, 95, 32),
            (64..96).collect::<Vec<_>>()
        );
    }

    #[test]
    fn short_video_is_edge_replicated() {
        let idx = keyframe_window_indices(20, 10, 32);
        assert_eq!(idx.len(), 32);
        let distinct: std::collections::BTreeSet<_> = idx.iter().collect();
        assert_eq!(distinct.len(), 20);
        assert_eq!(idx[16], 10);
        assert_eq!(
            idx.iter().filter(|&&i| i == 0).count() + idx.iter().filter(|&&i| i == 19).count(),
            14
        );
    }

    #[test]
    fn uniform_spacing() {
        assert_eq!(uniform_indices(96, 4), vec![12, 36, 60, 84]);
        assert_eq!(uniform_indices(3, 6), vec![0, 0, 1, 1, 2, 2]);
    }
}
